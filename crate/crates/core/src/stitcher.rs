//! Stitching per-frame hand estimates onto body estimates, then refining the
//! six arm rotations so that elbows, wrists and finger joints follow the
//! stitched pose.
//!
//! The refinement minimizes
//!
//! ```text
//! J = w_d Σ_t Σ_j |p_tj − y_tj|²
//!   + w_s Σ_{t≥1} Σ_j |p_tj − p_{t−1,j}|²
//!   + w_r Σ_t Σ_a angle(R_ta)²
//! ```
//!
//! over the 6D parameters of shoulders, elbows and wrists, where `p` are the
//! 34 target joints produced by forward kinematics and `y` the targets. It
//! uses gradient descent with Barzilai–Borwein step proposals and step
//! halving, so accepted objective values never increase.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{self, Side, ARM_BLOCKS, NUM_HAND_JOINTS, NUM_ROT_BLOCKS, ROT6D};
use crate::motion::{Handedness, MotionSequence};
use crate::rotation::{matrix_to_rot6d, rot6d_backward, rot6d_to_matrix, rotation_angle, Rotation6D};
use crate::skeleton::{decode_rotations, RootTransform, Skeleton};

pub const NUM_TARGETS: usize = 34;

/// One hand as seen by the hand reconstructor in a single frame.
#[derive(Debug, Clone, PartialEq)]
pub struct HandObservation {
    pub local: [Rotation6D; NUM_HAND_JOINTS],
    pub wrist_global: Matrix3<f64>,
    pub valid: bool,
}

impl HandObservation {
    pub fn invalid() -> Self {
        Self {
            local: [Rotation6D::IDENTITY; NUM_HAND_JOINTS],
            wrist_global: Matrix3::identity(),
            valid: false,
        }
    }
}

/// Per-frame observations, `[left, right]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HandEstimate {
    pub fps: f64,
    pub handedness: Handedness,
    pub frames: Vec<[HandObservation; 2]>,
}

fn side_index(side: Side) -> usize {
    match side {
        Side::Left => 0,
        Side::Right => 1,
    }
}

impl HandEstimate {
    pub fn observation(&self, t: usize, side: Side) -> &HandObservation {
        &self.frames[t][side_index(side)]
    }

    /// Reads the hands of a motion as if they had been observed directly.
    pub fn from_motion(m: &MotionSequence, skeleton: &Skeleton) -> Result<Self> {
        let mut frames = Vec::with_capacity(m.num_frames());
        for t in 0..m.num_frames() {
            let pose = skeleton.pose(m.frame(t), &RootTransform::default())?;
            let obs = |side: Side| HandObservation {
                local: std::array::from_fn(|j| m.rotation(t, layout::hand_block(side, j))),
                wrist_global: pose.globals[skeleton.wrist_joint(side)],
                valid: true,
            };
            frames.push([obs(Side::Left), obs(Side::Right)]);
        }
        Ok(Self {
            fps: m.fps,
            handedness: m.handedness,
            frames,
        })
    }
}

// ---------------------------------------------------------------------------
// HandEstimate container ("HHE1")
// ---------------------------------------------------------------------------

pub const HANDS_MAGIC: &[u8; 4] = b"HHE1";
pub const HANDS_VERSION: u32 = 1;
pub const HANDS_EXTENSION: &str = "hhe";
/// Floats per frame: per hand 15 × 6D local rotations + 3×3 wrist (row-major).
pub const HANDS_FEATURES: u32 = 2 * (15 * 6 + 9);
const HANDS_HEADER: usize = 21;

pub fn encode_hands(h: &HandEstimate) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(HANDS_MAGIC);
    out.extend_from_slice(&HANDS_VERSION.to_le_bytes());
    out.extend_from_slice(&(h.frames.len() as u32).to_le_bytes());
    out.extend_from_slice(&(h.fps as f32).to_le_bytes());
    out.push(match h.handedness {
        Handedness::Right => 0,
        Handedness::Left => 1,
    });
    out.extend_from_slice(&HANDS_FEATURES.to_le_bytes());
    let put = |out: &mut Vec<u8>, x: f64| out.extend_from_slice(&(x as f32).to_le_bytes());
    for frame in &h.frames {
        for obs in frame {
            for r in &obs.local {
                for x in r.0 {
                    put(&mut out, x);
                }
            }
            for i in 0..3 {
                for j in 0..3 {
                    put(&mut out, obs.wrist_global[(i, j)]);
                }
            }
        }
        out.push(frame[0].valid as u8);
        out.push(frame[1].valid as u8);
    }
    out
}

pub fn decode_hands(bytes: &[u8]) -> Result<HandEstimate> {
    if bytes.len() < 4 || &bytes[..4] != HANDS_MAGIC {
        return Err(Error::BadMagic("hand estimate".into()));
    }
    if bytes.len() < HANDS_HEADER {
        return Err(Error::TruncatedPayload("hand estimate header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != HANDS_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let n = u32_at(8) as usize;
    let fps = f32::from_le_bytes(bytes[12..16].try_into().unwrap()) as f64;
    let handedness = if bytes[16] == 1 { Handedness::Left } else { Handedness::Right };
    if u32_at(17) != HANDS_FEATURES {
        return Err(Error::LayoutMismatch(format!("hand feature count {}", u32_at(17))));
    }
    if n == 0 {
        return Err(Error::TruncatedPayload("frame count is zero".into()));
    }
    let per_frame = HANDS_FEATURES as usize * 4 + 2;
    if bytes.len() != HANDS_HEADER + n * per_frame {
        return Err(Error::TruncatedPayload(format!("hand estimate with {n} frames has wrong size")));
    }
    let mut frames = Vec::with_capacity(n);
    for chunk in bytes[HANDS_HEADER..].chunks_exact(per_frame) {
        let vals: Vec<f64> = chunk[..per_frame - 2]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let obs = |h: usize, valid: u8| {
            let base = h * 99;
            let local = std::array::from_fn(|j| Rotation6D::from_slice(&vals[base + j * 6..]));
            let w = &vals[base + 90..base + 99];
            HandObservation {
                local,
                wrist_global: Matrix3::new(w[0], w[1], w[2], w[3], w[4], w[5], w[6], w[7], w[8]),
                valid: valid != 0,
            }
        };
        frames.push([obs(0, chunk[per_frame - 2]), obs(1, chunk[per_frame - 1])]);
    }
    Ok(HandEstimate {
        fps,
        handedness,
        frames,
    })
}

pub fn write_hands(path: &Path, h: &HandEstimate) -> Result<()> {
    std::fs::write(path, encode_hands(h)).map_err(|e| Error::io(path, e))
}

pub fn read_hands(path: &Path) -> Result<HandEstimate> {
    decode_hands(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

// ---------------------------------------------------------------------------
// Merging
// ---------------------------------------------------------------------------

/// Replaces finger rotations with the hand estimate and rewrites each wrist's
/// local rotation so its global orientation matches the estimate.
pub fn merge_hands(body: &MotionSequence, hands: &HandEstimate, skeleton: &Skeleton) -> Result<MotionSequence> {
    if body.num_frames() != hands.frames.len() {
        return Err(Error::FrameCountMismatch {
            body: body.num_frames(),
            hands: hands.frames.len(),
        });
    }
    let mut out = body.clone();
    for t in 0..body.num_frames() {
        let pose = skeleton.pose(body.frame(t), &RootTransform::default())?;
        for side in [Side::Left, Side::Right] {
            let obs = hands.observation(t, side);
            if !obs.valid {
                continue;
            }
            for (j, r) in obs.local.iter().enumerate() {
                out.set_rotation(t, layout::hand_block(side, j), r);
            }
            let wrist = skeleton.wrist_joint(side);
            let parent = skeleton.joints[wrist].parent.expect("wrist has a parent");
            let local = pose.globals[parent].transpose() * obs.wrist_global;
            out.set_rotation(t, layout::wrist_block(side), &matrix_to_rot6d(&local)?);
        }
    }
    Ok(out)
}

pub type FrameTargets = [Vector3<f64>; NUM_TARGETS];

/// FK positions of elbows, wrists, left-hand and right-hand joints.
pub fn build_targets(merged: &MotionSequence, skeleton: &Skeleton, root: &RootTransform) -> Result<Vec<FrameTargets>> {
    let idx = skeleton.target_joints();
    (0..merged.num_frames())
        .map(|t| {
            let pos = skeleton.forward_kinematics(merged.frame(t), root)?;
            Ok(std::array::from_fn(|k| pos[idx[k]]))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Arm optimization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ArmInit {
    /// Arms start from the identity (T-pose).
    #[default]
    Neutral,
    /// Arms start from the rotations in the initial motion.
    FromInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StitchConfig {
    pub w_data: f64,
    pub w_smooth: f64,
    pub w_reg: f64,
    pub max_iterations: usize,
    pub step_size: f64,
    pub tolerance: f64,
    pub init: ArmInit,
}

impl Default for StitchConfig {
    fn default() -> Self {
        Self {
            w_data: 1.0,
            w_smooth: 0.1,
            w_reg: 0.01,
            max_iterations: 200,
            step_size: 1.0,
            tolerance: 1e-6,
            init: ArmInit::Neutral,
        }
    }
}

impl StitchConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.w_data, self.w_smooth, self.w_reg];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig("stitch weights must be finite and non-negative".into()));
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.step_size > 0.0) || !(self.tolerance >= 0.0) {
            return Err(Error::InvalidConfig("step size must be positive, tolerance non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchReport {
    /// Objective at the initialization followed by every accepted step.
    pub objective_trace: Vec<f64>,
    /// Mean distance between optimized and target joints, per frame (m).
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

/// Arm objective over a fixed motion, parameterized by the six arm blocks
/// of every frame (`frames × 36` values).
pub struct ArmObjective<'a> {
    skeleton: &'a Skeleton,
    base: Vec<Vec<Matrix3<f64>>>,
    targets: &'a [FrameTargets],
    root: RootTransform,
    target_joints: Vec<usize>,
    /// For each arm block, the target slots whose position depends on it.
    dependents: Vec<Vec<usize>>,
    cfg: StitchConfig,
}

pub const PARAMS_PER_FRAME: usize = ARM_BLOCKS.len() * ROT6D;

impl<'a> ArmObjective<'a> {
    pub fn new(
        skeleton: &'a Skeleton,
        init: &MotionSequence,
        targets: &'a [FrameTargets],
        root: RootTransform,
        cfg: StitchConfig,
    ) -> Result<Self> {
        if targets.len() != init.num_frames() {
            return Err(Error::FrameCountMismatch {
                body: init.num_frames(),
                hands: targets.len(),
            });
        }
        let base = init.frames().map(decode_rotations).collect::<Result<Vec<_>>>()?;
        let target_joints = skeleton.target_joints();
        let dependents = ARM_BLOCKS
            .iter()
            .map(|&b| {
                let a = skeleton.block_joint(b);
                target_joints
                    .iter()
                    .enumerate()
                    .filter(|(_, &j)| is_descendant(skeleton, j, a))
                    .map(|(k, _)| k)
                    .collect()
            })
            .collect();
        Ok(Self {
            skeleton,
            base,
            targets,
            root,
            target_joints,
            dependents,
            cfg,
        })
    }

    pub fn num_params(&self) -> usize {
        self.base.len() * PARAMS_PER_FRAME
    }

    fn arm_rotations(&self, params: &[f64], t: usize) -> Result<[Matrix3<f64>; 6]> {
        let mut out = [Matrix3::identity(); 6];
        for (a, m) in out.iter_mut().enumerate() {
            let off = t * PARAMS_PER_FRAME + a * ROT6D;
            *m = rot6d_to_matrix(&Rotation6D::from_slice(&params[off..]))?;
        }
        Ok(out)
    }

    fn frame_pose(&self, params: &[f64], t: usize) -> Result<(crate::skeleton::Pose, [Matrix3<f64>; 6])> {
        let arms = self.arm_rotations(params, t)?;
        let mut locals = self.base[t].clone();
        for (a, &b) in ARM_BLOCKS.iter().enumerate() {
            locals[b] = arms[a];
        }
        Ok((self.skeleton.pose_from_rotations(&locals, &self.root), arms))
    }

    fn target_positions(&self, pose: &crate::skeleton::Pose) -> FrameTargets {
        std::array::from_fn(|k| pose.positions[self.target_joints[k]])
    }

    pub fn value(&self, params: &[f64]) -> Result<f64> {
        Ok(self.evaluate(params, false)?.0)
    }

    pub fn value_and_gradient(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, g) = self.evaluate(params, true)?;
        Ok((v, g.expect("gradient requested")))
    }

    fn evaluate(&self, params: &[f64], with_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        let cfg = &self.cfg;
        let n = self.base.len();
        let mut poses = Vec::with_capacity(n);
        let mut arms = Vec::with_capacity(n);
        let mut positions = Vec::with_capacity(n);
        for t in 0..n {
            let (pose, arm) = self.frame_pose(params, t)?;
            positions.push(self.target_positions(&pose));
            poses.push(pose);
            arms.push(arm);
        }

        let mut value = 0.0;
        let mut pos_grad = vec![[Vector3::zeros(); NUM_TARGETS]; n];
        for t in 0..n {
            for k in 0..NUM_TARGETS {
                let d = positions[t][k] - self.targets[t][k];
                value += cfg.w_data * d.norm_squared();
                pos_grad[t][k] += 2.0 * cfg.w_data * d;
                if t > 0 {
                    let s = positions[t][k] - positions[t - 1][k];
                    value += cfg.w_smooth * s.norm_squared();
                    pos_grad[t][k] += 2.0 * cfg.w_smooth * s;
                    pos_grad[t - 1][k] -= 2.0 * cfg.w_smooth * s;
                }
            }
            for r in &arms[t] {
                let theta = rotation_angle(r);
                value += cfg.w_reg * theta * theta;
            }
        }
        if !with_grad {
            return Ok((value, None));
        }

        let mut grad = vec![0.0; params.len()];
        for t in 0..n {
            let pose = &poses[t];
            for (a, &b) in ARM_BLOCKS.iter().enumerate() {
                let joint = self.skeleton.block_joint(b);
                let parent = self.skeleton.joints[joint].parent.expect("arm joint has a parent");
                let x_a = pose.positions[joint];
                let g_parent = pose.globals[parent];
                let g_a = pose.globals[joint];
                let mut acc = Matrix3::zeros();
                for &k in &self.dependents[a] {
                    let w = g_a.transpose() * (positions[t][k] - x_a);
                    acc += pos_grad[t][k] * w.transpose();
                }
                let mut d_rot = g_parent.transpose() * acc;

                let r = &arms[t][a];
                let theta = rotation_angle(r);
                let sin = theta.sin();
                let ratio = if theta < 1e-4 { 1.0 + theta * theta / 6.0 } else { theta / sin.max(1e-9) };
                d_rot -= Matrix3::identity() * (cfg.w_reg * ratio);

                let off = t * PARAMS_PER_FRAME + a * ROT6D;
                let g6 = rot6d_backward(&Rotation6D::from_slice(&params[off..]), &d_rot);
                grad[off..off + ROT6D].copy_from_slice(&g6);
            }
        }
        Ok((value, Some(grad)))
    }

    pub fn positions(&self, params: &[f64]) -> Result<Vec<FrameTargets>> {
        (0..self.base.len())
            .map(|t| Ok(self.target_positions(&self.frame_pose(params, t)?.0)))
            .collect()
    }
}

fn is_descendant(skeleton: &Skeleton, mut joint: usize, ancestor: usize) -> bool {
    loop {
        if joint == ancestor {
            return true;
        }
        match skeleton.joints[joint].parent {
            Some(p) => joint = p,
            None => return false,
        }
    }
}

/// Packs the arm blocks of `m` into a parameter vector.
pub fn arm_params(m: &MotionSequence, init: ArmInit) -> Vec<f64> {
    let mut params = Vec::with_capacity(m.num_frames() * PARAMS_PER_FRAME);
    for t in 0..m.num_frames() {
        for &b in &ARM_BLOCKS {
            let r = match init {
                ArmInit::Neutral => Rotation6D::IDENTITY,
                ArmInit::FromInput => m.rotation(t, b),
            };
            params.extend_from_slice(&r.0);
        }
    }
    params
}

pub fn optimize_arms(
    targets: &[FrameTargets],
    init: &MotionSequence,
    cfg: &StitchConfig,
    skeleton: &Skeleton,
    root: &RootTransform,
) -> Result<(MotionSequence, StitchReport)> {
    cfg.validate()?;
    let objective = ArmObjective::new(skeleton, init, targets, *root, *cfg)?;
    let mut params = arm_params(init, cfg.init);
    let (mut value, mut grad) = objective.value_and_gradient(&params)?;
    if !value.is_finite() {
        return Err(Error::NonFiniteObjective {
            iteration: 0,
            detail: format!("initial objective {value}"),
        });
    }
    let mut trace = vec![value];
    let mut step = cfg.step_size;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        if let Some((p_prev, g_prev)) = &prev {
            let (mut ss, mut sy) = (0.0, 0.0);
            for i in 0..params.len() {
                let s = params[i] - p_prev[i];
                ss += s * s;
                sy += s * (grad[i] - g_prev[i]);
            }
            if sy > 0.0 && ss > 0.0 {
                step = ss / sy;
            }
        }
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = params.iter().zip(&grad).map(|(p, g)| p - step * g).collect();
            match objective.value(&trial) {
                Ok(v) if v.is_finite() && v <= value => {
                    accepted = Some((trial, v));
                    break;
                }
                Ok(v) if v.is_nan() => {
                    return Err(Error::NonFiniteObjective {
                        iteration: iterations,
                        detail: "objective evaluated to NaN".into(),
                    })
                }
                // too long a step, or a degenerate 6D block: shorten
                _ => step *= 0.5,
            }
        }
        let Some((trial, new_value)) = accepted else { break };
        let (v, g) = objective.value_and_gradient(&trial)?;
        debug_assert_eq!(v, new_value);
        prev = Some((std::mem::replace(&mut params, trial), std::mem::replace(&mut grad, g)));
        let decrease = value - new_value;
        value = new_value;
        trace.push(value);
        if value == 0.0 || decrease <= cfg.tolerance * value.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }

    let mut out = init.clone();
    for t in 0..out.num_frames() {
        for (a, &b) in ARM_BLOCKS.iter().enumerate() {
            let off = t * PARAMS_PER_FRAME + a * ROT6D;
            let m = rot6d_to_matrix(&Rotation6D::from_slice(&params[off..]))?;
            out.set_rotation(t, b, &matrix_to_rot6d(&m)?);
        }
    }
    let final_positions = objective.positions(&params)?;
    let residuals = final_positions
        .iter()
        .zip(targets)
        .map(|(p, y)| p.iter().zip(y).map(|(a, b)| (a - b).norm()).sum::<f64>() / NUM_TARGETS as f64)
        .collect();
    Ok((
        out,
        StitchReport {
            objective_trace: trace,
            residuals,
            iterations,
        },
    ))
}

/// Merge, build targets, refine arms.
pub fn stitch(
    body: &MotionSequence,
    hands: &HandEstimate,
    skeleton: &Skeleton,
    cfg: &StitchConfig,
) -> Result<(MotionSequence, StitchReport)> {
    let merged = merge_hands(body, hands, skeleton)?;
    let root = RootTransform::default();
    let targets = build_targets(&merged, skeleton, &root)?;
    optimize_arms(&targets, &merged, cfg, skeleton, &root)
}

/// Number of rotation blocks left untouched by arm optimization.
pub const FROZEN_BLOCKS: usize = NUM_ROT_BLOCKS - ARM_BLOCKS.len();

//! Upper-body kinematic skeleton and forward kinematics.
//!
//! Canonical frame: `+x` towards the signer's left, `+y` up, `+z` forward
//! (out of the chest). Rest offsets are in meters and describe a T-pose.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{self, Side, FRAME_WIDTH, HAND_JOINTS, NUM_HAND_JOINTS, NUM_ROT_BLOCKS, ROT6D};
use crate::rotation::{rot6d_to_matrix, Rotation6D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    /// `None` for the root.
    pub parent: Option<usize>,
    pub offset: [f64; 3],
    /// Rotation block driving this joint; `None` for fixed sites.
    pub block: Option<usize>,
}

/// A named body-part anchor rigidly attached to a joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub joint: usize,
    #[serde(default)]
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub joints: Vec<Joint>,
    pub markers: BTreeMap<String, Marker>,
    #[serde(skip)]
    block_joint: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RootTransform {
    fn default() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }
}

impl RootTransform {
    pub fn translation(t: Vector3<f64>) -> Self {
        Self {
            translation: t,
            ..Self::default()
        }
    }
}

/// Joint positions and global orientations for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub positions: Vec<Vector3<f64>>,
    pub globals: Vec<Matrix3<f64>>,
}

/// Decodes all 43 rotation blocks of a frame.
pub fn decode_rotations(frame: &[f64]) -> Result<Vec<Matrix3<f64>>> {
    if frame.len() != FRAME_WIDTH {
        return Err(Error::LayoutMismatch(format!(
            "frame has {} features, expected {FRAME_WIDTH}",
            frame.len()
        )));
    }
    (0..NUM_ROT_BLOCKS)
        .map(|b| rot6d_to_matrix(&Rotation6D::from_slice(&frame[b * ROT6D..])))
        .collect()
}

fn v(x: f64, y: f64, z: f64) -> [f64; 3] {
    [x, y, z]
}

// Finger rest offsets for the left hand; the right hand mirrors x.
const FINGER_OFFSETS: [[f64; 3]; NUM_HAND_JOINTS] = [
    [0.090, 0.005, 0.025],
    [0.035, 0.0, 0.0],
    [0.025, 0.0, 0.0],
    [0.095, 0.005, 0.005],
    [0.036, 0.0, 0.0],
    [0.027, 0.0, 0.0],
    [0.080, 0.0, -0.035],
    [0.025, 0.0, 0.0],
    [0.018, 0.0, 0.0],
    [0.090, 0.003, -0.015],
    [0.032, 0.0, 0.0],
    [0.025, 0.0, 0.0],
    [0.025, -0.010, 0.030],
    [0.030, 0.0, 0.020],
    [0.025, 0.0, 0.015],
];

impl Skeleton {
    pub fn new(joints: Vec<Joint>, markers: BTreeMap<String, Marker>) -> Result<Self> {
        let mut block_joint = vec![usize::MAX; NUM_ROT_BLOCKS];
        for (i, j) in joints.iter().enumerate() {
            match j.parent {
                None if i != 0 => {
                    return Err(Error::LayoutMismatch(format!("joint {} has no parent but is not the root", j.name)))
                }
                Some(_) if i == 0 => return Err(Error::LayoutMismatch("root joint has a parent".into())),
                Some(p) if p >= i => {
                    return Err(Error::LayoutMismatch(format!(
                        "joint {} has parent {p} not preceding it",
                        j.name
                    )))
                }
                _ => {}
            }
            if let Some(b) = j.block {
                if b >= NUM_ROT_BLOCKS || block_joint[b] != usize::MAX {
                    return Err(Error::LayoutMismatch(format!("rotation block {b} invalid or reused")));
                }
                block_joint[b] = i;
            }
        }
        if let Some(b) = block_joint.iter().position(|&j| j == usize::MAX) {
            return Err(Error::LayoutMismatch(format!("rotation block {b} drives no joint")));
        }
        for (name, m) in &markers {
            if m.joint >= joints.len() {
                return Err(Error::UnknownAnchor(name.clone()));
            }
        }
        Ok(Self {
            joints,
            markers,
            block_joint,
        })
    }

    /// Loads a skeleton from the documented JSON layout
    /// (`{"joints": [{name, parent, offset, block}], "markers": {...}}`).
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: Skeleton = serde_json::from_str(&text)?;
        Self::new(raw.joints, raw.markers)
    }

    /// Synthetic anthropometric upper body with 13 body joints, two 15-joint
    /// hands, a pelvis root and five fingertip sites per hand.
    pub fn bundled() -> Self {
        let mut joints = Vec::new();
        let mut push = |name: &str, parent: Option<usize>, offset: [f64; 3], block: Option<usize>| {
            joints.push(Joint {
                name: name.to_string(),
                parent,
                offset,
                block,
            });
            joints.len() - 1
        };
        let pelvis = push("pelvis", None, v(0.0, 0.0, 0.0), None);
        let spine1 = push("spine1", Some(pelvis), v(0.0, 0.10, -0.01), Some(0));
        let spine2 = push("spine2", Some(spine1), v(0.0, 0.13, 0.0), Some(1));
        let spine3 = push("spine3", Some(spine2), v(0.0, 0.06, 0.0), Some(2));
        let neck = push("neck", Some(spine3), v(0.0, 0.21, -0.02), Some(3));
        let _head = push("head", Some(neck), v(0.0, 0.09, 0.02), Some(4));
        let lcollar = push("left_collar", Some(spine3), v(0.07, 0.12, -0.01), Some(5));
        let rcollar = push("right_collar", Some(spine3), v(-0.07, 0.12, -0.01), Some(6));
        let lsh = push("left_shoulder", Some(lcollar), v(0.11, 0.03, 0.0), Some(7));
        let rsh = push("right_shoulder", Some(rcollar), v(-0.11, 0.03, 0.0), Some(8));
        let lel = push("left_elbow", Some(lsh), v(0.26, 0.0, 0.0), Some(9));
        let rel = push("right_elbow", Some(rsh), v(-0.26, 0.0, 0.0), Some(10));
        let lwr = push("left_wrist", Some(lel), v(0.25, 0.0, 0.0), Some(11));
        let rwr = push("right_wrist", Some(rel), v(-0.25, 0.0, 0.0), Some(12));

        let mut finger_tips = Vec::new();
        for (side, wrist) in [(Side::Left, lwr), (Side::Right, rwr)] {
            let mirror = if side == Side::Left { 1.0 } else { -1.0 };
            let mut parent = wrist;
            for (j, name) in HAND_JOINTS.iter().enumerate() {
                if j % 3 == 0 {
                    parent = wrist;
                }
                let o = FINGER_OFFSETS[j];
                parent = push(
                    &format!("{}_{name}", side.as_str()),
                    Some(parent),
                    v(mirror * o[0], o[1], o[2]),
                    Some(layout::hand_block(side, j)),
                );
                if j % 3 == 2 {
                    finger_tips.push((format!("{}_{}tip", side.as_str(), &name[..name.len() - 1]), parent, mirror));
                }
            }
        }
        for (name, parent, mirror) in finger_tips {
            push(&name, Some(parent), v(mirror * 0.02, 0.0, 0.0), None);
        }

        let joint_index = |joints: &[Joint], name: &str| joints.iter().position(|j| j.name == name).unwrap();
        let mut markers = BTreeMap::new();
        let mut marker = |name: &str, joint: &str, offset: [f64; 3]| {
            markers.insert(
                name.to_string(),
                Marker {
                    joint: joint_index(&joints, joint),
                    offset,
                },
            );
        };
        marker("head", "head", v(0.0, 0.08, 0.03));
        marker("chin", "head", v(0.0, -0.04, 0.09));
        marker("torso", "spine2", v(0.0, 0.0, 0.10));
        marker("chest", "spine3", v(0.0, 0.06, 0.11));
        marker("left_shoulder", "left_shoulder", v(0.0, 0.0, 0.0));
        marker("right_shoulder", "right_shoulder", v(0.0, 0.0, 0.0));
        marker("left_hand", "left_middle1", v(0.0, 0.0, 0.0));
        marker("right_hand", "right_middle1", v(0.0, 0.0, 0.0));

        Self::new(joints, markers).expect("bundled skeleton is valid")
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Joint driven by rotation block `b`.
    pub fn block_joint(&self, b: usize) -> usize {
        self.block_joint[b]
    }

    /// Copy with every rest offset multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut s = self.clone();
        for j in &mut s.joints {
            j.offset = j.offset.map(|x| x * c);
        }
        for m in s.markers.values_mut() {
            m.offset = m.offset.map(|x| x * c);
        }
        s
    }

    /// Forward kinematics from pre-decoded local rotations (one per block).
    pub fn pose_from_rotations(&self, locals: &[Matrix3<f64>], root: &RootTransform) -> Pose {
        let n = self.joints.len();
        let mut positions = Vec::with_capacity(n);
        let mut globals = Vec::with_capacity(n);
        for j in &self.joints {
            let local = j.block.map(|b| locals[b]).unwrap_or_else(Matrix3::identity);
            let offset = Vector3::from(j.offset);
            let (pos, parent_rot) = match j.parent {
                None => (root.translation + root.rotation * offset, root.rotation),
                Some(p) => (positions[p] + globals[p] * offset, globals[p]),
            };
            positions.push(pos);
            globals.push(parent_rot * local);
        }
        Pose { positions, globals }
    }

    pub fn pose(&self, frame: &[f64], root: &RootTransform) -> Result<Pose> {
        Ok(self.pose_from_rotations(&decode_rotations(frame)?, root))
    }

    /// Joint positions in meters.
    pub fn forward_kinematics(&self, frame: &[f64], root: &RootTransform) -> Result<Vec<Vector3<f64>>> {
        Ok(self.pose(frame, root)?.positions)
    }

    /// Product of local rotations from the root down to `joint`.
    pub fn global_orientation(&self, frame: &[f64], joint: usize) -> Result<Matrix3<f64>> {
        if joint >= self.joints.len() {
            return Err(Error::IndexOutOfRange {
                index: joint,
                len: self.joints.len(),
            });
        }
        let locals = decode_rotations(frame)?;
        let mut chain = Vec::new();
        let mut cur = Some(joint);
        while let Some(j) = cur {
            chain.push(j);
            cur = self.joints[j].parent;
        }
        Ok(chain.iter().rev().fold(Matrix3::identity(), |acc, &j| {
            acc * self.joints[j].block.map(|b| locals[b]).unwrap_or_else(Matrix3::identity)
        }))
    }

    pub fn marker_position(&self, pose: &Pose, name: &str) -> Result<Vector3<f64>> {
        let m = self.markers.get(name).ok_or_else(|| Error::UnknownAnchor(name.to_string()))?;
        Ok(pose.positions[m.joint] + pose.globals[m.joint] * Vector3::from(m.offset))
    }

    pub fn wrist_joint(&self, side: Side) -> usize {
        self.block_joint(layout::wrist_block(side))
    }

    /// Joints whose positions are used as stitching targets: elbows, wrists,
    /// then the 15 left-hand and 15 right-hand joints.
    pub fn target_joints(&self) -> Vec<usize> {
        let mut out = vec![
            self.block_joint(layout::LEFT_ELBOW_BLOCK),
            self.block_joint(layout::RIGHT_ELBOW_BLOCK),
            self.block_joint(layout::LEFT_WRIST_BLOCK),
            self.block_joint(layout::RIGHT_WRIST_BLOCK),
        ];
        for side in [Side::Left, Side::Right] {
            out.extend((0..NUM_HAND_JOINTS).map(|j| self.block_joint(layout::hand_block(side, j))));
        }
        out
    }
}

impl Default for Skeleton {
    fn default() -> Self {
        Self::bundled()
    }
}

//! Text-conditioned denoising diffusion over feature sequences.
//!
//! The denoiser predicts x0 directly. Classifier-free guidance combines the
//! conditional and unconditional x0 estimates at every sampling step.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use candle_core::{DType, Device, IndexOp, Tensor};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use handmotion_core::layout::{FACE_OFFSET, FRAME_WIDTH, ROT6D};
use handmotion_core::motion::{Handedness, MotionSequence};
use handmotion_core::rotation::project_rot6d;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{key_padding_bias, sinusoidal, Encoder, Linear, ParamStore};

pub const CHECKPOINT_KIND: &str = "diffusion";
pub const DEFAULT_STEPS: usize = 100;
pub const COSINE_S: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    Cosine { s: f64 },
    /// β linearly spaced between the endpoints, given for 1000 steps and
    /// rescaled by 1000/N.
    Linear { beta_start: f64, beta_end: f64 },
}

impl Default for ScheduleKind {
    fn default() -> Self {
        ScheduleKind::Cosine { s: COSINE_S }
    }
}

/// Per-step constants, indexed by t in 1..=N.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn build(n: usize, kind: ScheduleKind) -> Result<Self> {
        if n == 0 {
            return Err(Error::BadScheduleParams("at least one step is required".into()));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Cosine { s } => {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::BadScheduleParams(format!("cosine offset s = {s}")));
                }
                let f = |t: usize| (((t as f64 / n as f64) + s) / (1.0 + s) * FRAC_PI_2).cos().powi(2);
                (1..=n).map(|t| (1.0 - f(t) / f(t - 1)).clamp(0.0, MAX_BETA)).collect()
            }
            ScheduleKind::Linear { beta_start, beta_end } => {
                let scale = 1000.0 / n as f64;
                let (a, b) = (beta_start * scale, beta_end * scale);
                if n == 1 {
                    vec![a]
                } else {
                    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
                }
            }
        };
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::BadScheduleParams(format!("β = {b} outside (0, 1)")));
        }
        let mut alpha_bars = Vec::with_capacity(n);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    /// ᾱ_t, with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Coefficients of q(x_{t-1} | x_t, x0): mean = c0·x0 + ct·x_t, and the
    /// variance.
    pub fn posterior(&self, t: usize) -> (f64, f64, f64) {
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        let beta = self.beta(t);
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = self.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let var = beta * (1.0 - ab_prev) / (1.0 - ab);
        (c0, ct, var)
    }
}

pub fn q_sample(x0: &[f64], t: usize, noise: &[f64], schedule: &NoiseSchedule) -> Vec<f64> {
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.iter().zip(noise).map(|(x, n)| a * x + b * n).collect()
}

/// Anything that maps a noisy sequence to an x0 estimate. `x_t` holds
/// `frames × width` values row-major.
pub trait X0Predictor {
    fn width(&self) -> usize;
    fn max_len(&self) -> usize;
    fn predict(&self, x_t: &[f64], frames: usize, t: usize, cond: Option<&[f64]>) -> Result<Vec<f64>>;

    /// Conditional and unconditional estimates together.
    fn predict_pair(&self, x_t: &[f64], frames: usize, t: usize, cond: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.predict(x_t, frames, t, Some(cond))?, self.predict(x_t, frames, t, None)?))
    }

    /// Projection applied to the guided estimate before the posterior step.
    fn constrain(&self, _x0: &mut [f64]) {}
}

/// x0_uncond + λ·(x0_cond − x0_uncond), written so that λ = 1 returns the
/// conditional estimate bit for bit.
pub fn guide(cond: &[f64], uncond: &[f64], lambda: f64) -> Vec<f64> {
    cond.iter().zip(uncond).map(|(c, u)| c + (lambda - 1.0) * (c - u)).collect()
}

fn guided_x0<P: X0Predictor + ?Sized>(
    model: &P,
    x: &[f64],
    frames: usize,
    t: usize,
    cond: Option<&[f64]>,
    lambda: f64,
) -> Result<Vec<f64>> {
    match cond {
        None => model.predict(x, frames, t, None),
        Some(_) if lambda == 0.0 => model.predict(x, frames, t, None),
        Some(c) if lambda == 1.0 => model.predict(x, frames, t, Some(c)),
        Some(c) => {
            let (xc, xu) = model.predict_pair(x, frames, t, c)?;
            Ok(guide(&xc, &xu, lambda))
        }
    }
}

/// Ancestral sampling from t = N down to 1. The final step returns the
/// guided x0 estimate.
pub fn sample<P: X0Predictor + ?Sized>(
    model: &P,
    cond: Option<&[f64]>,
    frames: usize,
    lambda: f64,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<f64>> {
    if frames == 0 || frames > model.max_len() {
        return Err(Error::LengthExceedsMax {
            len: frames,
            max: model.max_len(),
        });
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidConfig(format!("guidance λ = {lambda}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = frames * model.width();
    let mut x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    for t in (1..=schedule.steps()).rev() {
        let mut x0 = guided_x0(model, &x, frames, t, cond, lambda)?;
        model.constrain(&mut x0);
        if t == 1 {
            return Ok(x0);
        }
        let (c0, ct, var) = schedule.posterior(t);
        let sd = var.sqrt();
        for (xi, x0i) in x.iter_mut().zip(&x0) {
            let z: f64 = rng.sample(StandardNormal);
            *xi = c0 * x0i + ct * *xi + sd * z;
        }
    }
    unreachable!("schedule has at least one step")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub feature_dim: usize,
    pub text_dim: usize,
    pub width: usize,
    pub heads: usize,
    pub depth: usize,
    pub ff: usize,
    pub max_len: usize,
    pub steps: usize,
    pub schedule: ScheduleKind,
    pub p_drop: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub guidance: f64,
    /// Project every guided x0 rotation block onto SO(3) while sampling.
    /// Full-frame models only.
    pub project_rotations: bool,
    pub seed: u64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            feature_dim: FRAME_WIDTH,
            text_dim: 256,
            width: 256,
            heads: 4,
            depth: 4,
            ff: 1024,
            max_len: 128,
            steps: DEFAULT_STEPS,
            schedule: ScheduleKind::default(),
            p_drop: 0.05,
            learning_rate: 1e-4,
            weight_decay: 0.0,
            batch_size: 32,
            epochs: 300,
            guidance: 15.0,
            project_rotations: true,
            seed: 0,
        }
    }
}

impl DiffusionConfig {
    /// Long training with mild guidance, for small datasets.
    pub fn small_dataset() -> Self {
        Self {
            epochs: 2000,
            guidance: 5.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p_drop) {
            return Err(Error::InvalidConfig(format!("p_drop = {} outside [0, 1)", self.p_drop)));
        }
        if !self.guidance.is_finite() || self.guidance < 0.0 {
            return Err(Error::InvalidConfig(format!("guidance λ = {}", self.guidance)));
        }
        if self.width % self.heads != 0 {
            return Err(Error::InvalidConfig("width must be divisible by heads".into()));
        }
        if self.feature_dim == 0 || self.text_dim == 0 || self.max_len == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Number of tokens ahead of the motion tokens: text, timestep, 2 registers.
pub const PREFIX_TOKENS: usize = 4;

pub struct Denoiser {
    pub cfg: DiffusionConfig,
    pub schedule: NoiseSchedule,
    store: ParamStore,
    text_proj: Linear,
    null_token: Tensor,
    time_a: Linear,
    time_b: Linear,
    registers: Tensor,
    motion_in: Linear,
    pos: Tensor,
    encoder: Encoder,
    motion_out: Linear,
}

impl Denoiser {
    pub fn new(cfg: DiffusionConfig, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let schedule = NoiseSchedule::build(cfg.steps, cfg.schedule)?;
        let mut ps = ParamStore::new(cfg.seed, dtype);
        let w = cfg.width;
        let text_proj = Linear::new(&mut ps, "text.proj", cfg.text_dim, w)?;
        let null_token = ps.normal("text.null", &[w], 0.02)?;
        let time_a = Linear::new(&mut ps, "time.a", w, w)?;
        let time_b = Linear::new(&mut ps, "time.b", w, w)?;
        let registers = ps.normal("registers", &[2, w], 0.02)?;
        let motion_in = Linear::new(&mut ps, "motion.input", cfg.feature_dim, w)?;
        let pos = ps.normal("motion.pos", &[cfg.max_len, w], 0.02)?;
        let encoder = Encoder::new(&mut ps, "encoder", w, cfg.heads, cfg.ff, cfg.depth)?;
        let motion_out = Linear::new(&mut ps, "motion.output", w, cfg.feature_dim)?;
        Ok(Self {
            cfg,
            schedule,
            store: ps,
            text_proj,
            null_token,
            time_a,
            time_b,
            registers,
            motion_in,
            pos,
            encoder,
            motion_out,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    fn device(&self) -> &Device {
        self.store.device()
    }

    fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// x_t: [B, T, F]; mask: [B, T] with 1 for real frames; cond: [B, text_dim]
    /// or None for the null condition; keep: [B] with 1 where the condition is
    /// used. Returns x0 estimates zeroed at padded frames.
    pub fn forward(
        &self,
        x_t: &Tensor,
        t: &[usize],
        cond: Option<&Tensor>,
        keep: Option<&Tensor>,
        mask: &Tensor,
    ) -> Result<Tensor> {
        let (b, frames, f) = x_t.dims3()?;
        if f != self.cfg.feature_dim {
            return Err(Error::FeatureWidthMismatch {
                expected: self.cfg.feature_dim,
                got: f,
            });
        }
        if frames > self.cfg.max_len {
            return Err(Error::LengthExceedsMax {
                len: frames,
                max: self.cfg.max_len,
            });
        }
        let w = self.cfg.width;
        let null = self.null_token.reshape((1, 1, w))?.broadcast_as((b, 1, w))?;
        let text_tok = match cond {
            None => null.contiguous()?,
            Some(c) => {
                let proj = self.text_proj.forward(c)?.unsqueeze(1)?;
                match keep {
                    None => proj,
                    Some(k) => {
                        let k = k.reshape((b, 1, 1))?;
                        (proj.broadcast_mul(&k)? + null.broadcast_mul(&k.affine(-1.0, 1.0)?)?)?
                    }
                }
            }
        };
        let steps: Vec<f64> = t.iter().map(|&s| s as f64).collect();
        let emb = sinusoidal(&steps, w, self.dtype(), self.device())?;
        let time_tok = self.time_b.forward(&self.time_a.forward(&emb)?.silu()?)?.unsqueeze(1)?;
        let regs = self.registers.unsqueeze(0)?.broadcast_as((b, 2, w))?.contiguous()?;
        let motion = self.motion_in.forward(x_t)?.broadcast_add(&self.pos.i(..frames)?)?;
        let tokens = Tensor::cat(&[&text_tok, &time_tok, &regs, &motion], 1)?;
        let full_mask = Tensor::cat(&[&Tensor::ones((b, PREFIX_TOKENS), self.dtype(), self.device())?, mask], 1)?;
        let h = self.encoder.forward(&tokens, Some(&key_padding_bias(&full_mask)?))?;
        let out = self.motion_out.forward(&h.i((.., PREFIX_TOKENS..))?)?;
        Ok(out.broadcast_mul(&mask.unsqueeze(2)?)?)
    }

    fn tensor3(&self, values: Vec<f64>, b: usize, frames: usize) -> Result<Tensor> {
        Ok(Tensor::from_vec(values, (b, frames, self.cfg.feature_dim), self.device())?.to_dtype(self.dtype())?)
    }

    fn cond_tensor(&self, rows: &[&[f64]]) -> Result<Tensor> {
        for r in rows {
            if r.len() != self.cfg.text_dim {
                return Err(Error::FeatureWidthMismatch {
                    expected: self.cfg.text_dim,
                    got: r.len(),
                });
            }
        }
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Ok(Tensor::from_vec(flat, (rows.len(), self.cfg.text_dim), self.device())?.to_dtype(self.dtype())?)
    }

    fn flat(t: &Tensor) -> Result<Vec<f64>> {
        Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::from_store(CHECKPOINT_KIND, serde_json::to_value(&self.cfg)?, serde_json::Value::Null, &self.store)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::InvalidConfig(format!("expected a {CHECKPOINT_KIND} checkpoint, got {}", ck.kind)));
        }
        let cfg: DiffusionConfig = serde_json::from_value(ck.config.clone())?;
        let model = Self::new(cfg, DType::F32)?;
        model.store.load(&ck.to_tensors(model.device())?)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Samples a motion and projects every rotation block onto SO(3).
    pub fn generate(&self, cond: &[f64], frames: usize, lambda: f64, seed: u64, id: &str) -> Result<MotionSequence> {
        if self.cfg.feature_dim != FRAME_WIDTH {
            return Err(Error::FeatureWidthMismatch {
                expected: FRAME_WIDTH,
                got: self.cfg.feature_dim,
            });
        }
        let data = sample(self, Some(cond), frames, lambda, &self.schedule, seed)?;
        let mut m = MotionSequence::new(id, 25.0, Handedness::Right, data)?;
        m.project_rotations();
        Ok(m)
    }
}

impl X0Predictor for Denoiser {
    fn width(&self) -> usize {
        self.cfg.feature_dim
    }

    fn max_len(&self) -> usize {
        self.cfg.max_len
    }

    fn predict(&self, x_t: &[f64], frames: usize, t: usize, cond: Option<&[f64]>) -> Result<Vec<f64>> {
        let x = self.tensor3(x_t.to_vec(), 1, frames)?;
        let mask = Tensor::ones((1, frames), self.dtype(), self.device())?;
        let c = cond.map(|c| self.cond_tensor(&[c])).transpose()?;
        Self::flat(&self.forward(&x, &[t], c.as_ref(), None, &mask)?)
    }

    fn predict_pair(&self, x_t: &[f64], frames: usize, t: usize, cond: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = self.tensor3([x_t, x_t].concat(), 2, frames)?;
        let mask = Tensor::ones((2, frames), self.dtype(), self.device())?;
        let c = self.cond_tensor(&[cond, cond])?;
        let keep = Tensor::from_vec(vec![1.0f64, 0.0], 2, self.device())?.to_dtype(self.dtype())?;
        let out = Self::flat(&self.forward(&x, &[t, t], Some(&c), Some(&keep), &mask)?)?;
        let n = x_t.len();
        Ok((out[..n].to_vec(), out[n..].to_vec()))
    }

    fn constrain(&self, x0: &mut [f64]) {
        if !self.cfg.project_rotations || self.cfg.feature_dim != FRAME_WIDTH {
            return;
        }
        for frame in x0.chunks_mut(FRAME_WIDTH) {
            for block in frame[..FACE_OFFSET].chunks_mut(ROT6D) {
                project_rot6d(block);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiffusionExample {
    /// `frames × feature_dim` values, row-major.
    pub motion: Vec<f64>,
    pub frames: usize,
    /// Embeddings of the texts describing this motion.
    pub conditions: Vec<Vec<f64>>,
}

/// One optimizer step on a batch. Each sample draws one of its texts, drops
/// it with probability `p_drop`, and a timestep uniform in 1..=N. Returns the
/// masked MSE between predicted and clean motion.
pub fn training_step(
    model: &Denoiser,
    batch: &[&DiffusionExample],
    opt: Option<&mut AdamW>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let loss = batch_loss(model, batch, rng)?;
    let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if let Some(opt) = opt {
        opt.backward_step(&loss)?;
    }
    Ok(value)
}

pub fn batch_loss(model: &Denoiser, batch: &[&DiffusionExample], rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let f = model.cfg.feature_dim;
    let b = batch.len();
    let frames = batch.iter().map(|e| e.frames).max().unwrap_or(0);
    if b == 0 || frames == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut x0 = vec![0.0; b * frames * f];
    let mut xt = vec![0.0; b * frames * f];
    let mut mask = vec![0.0; b * frames];
    let mut conds: Vec<&[f64]> = Vec::with_capacity(b);
    let mut keep = Vec::with_capacity(b);
    let mut ts = Vec::with_capacity(b);
    for (i, e) in batch.iter().enumerate() {
        if e.motion.len() != e.frames * f {
            return Err(Error::FeatureWidthMismatch {
                expected: e.frames * f,
                got: e.motion.len(),
            });
        }
        if e.conditions.is_empty() {
            return Err(Error::EmptyDataset);
        }
        conds.push(&e.conditions[rng.gen_range(0..e.conditions.len())]);
        keep.push(if rng.gen::<f64>() < model.cfg.p_drop { 0.0 } else { 1.0 });
        let t = rng.gen_range(1..=model.schedule.steps());
        ts.push(t);
        let noise: Vec<f64> = (0..e.motion.len()).map(|_| rng.sample(StandardNormal)).collect();
        let noisy = q_sample(&e.motion, t, &noise, &model.schedule);
        let off = i * frames * f;
        x0[off..off + e.motion.len()].copy_from_slice(&e.motion);
        xt[off..off + e.motion.len()].copy_from_slice(&noisy);
        mask[i * frames..i * frames + e.frames].fill(1.0);
    }
    let dev = model.device();
    let dt = model.dtype();
    let x0 = model.tensor3(x0, b, frames)?;
    let xt = model.tensor3(xt, b, frames)?;
    let mask = Tensor::from_vec(mask, (b, frames), dev)?.to_dtype(dt)?;
    let cond = model.cond_tensor(&conds)?;
    let keep = Tensor::from_vec(keep, b, dev)?.to_dtype(dt)?;
    let pred = model.forward(&xt, &ts, Some(&cond), Some(&keep), &mask)?;
    masked_mse(&pred, &x0, &mask)
}

pub fn masked_mse(pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let f = pred.dim(2)?;
    let sq = (pred - target)?.sqr()?.broadcast_mul(&mask.unsqueeze(2)?)?.sum_all()?;
    Ok(sq.div(&(mask.sum_all()? * f as f64)?)?)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiffusionLog {
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
}

pub fn train_diffusion(data: &[DiffusionExample], cfg: &DiffusionConfig) -> Result<(Denoiser, DiffusionLog)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let model = Denoiser::new(cfg.clone(), DType::F32)?;
    for e in data {
        if e.frames > cfg.max_len {
            return Err(Error::LengthExceedsMax {
                len: e.frames,
                max: cfg.max_len,
            });
        }
    }
    let mut opt = AdamW::new(
        model.store.vars(),
        ParamsAdamW {
            lr: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6469_6666);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = DiffusionLog::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&DiffusionExample> = chunk.iter().map(|&i| &data[i]).collect();
            let loss = training_step(&model, &batch, Some(&mut opt), &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::InvalidConfig(format!("loss became non-finite at epoch {epoch}")));
            }
            total += loss;
            count += 1;
            log.steps += 1;
        }
        let mean = total / count as f64;
        if epoch % 10 == 0 || epoch + 1 == cfg.epochs {
            log::info!("diffusion epoch {epoch}: loss {mean:.5}");
        }
        log.epoch_loss.push(mean);
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Oracle(Vec<f64>);

    impl X0Predictor for Oracle {
        fn width(&self) -> usize {
            self.0.len()
        }
        fn max_len(&self) -> usize {
            1
        }
        fn predict(&self, _: &[f64], _: usize, _: usize, _: Option<&[f64]>) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    /// Conditional estimate = cond, unconditional = x_t scaled.
    struct Split;

    impl X0Predictor for Split {
        fn width(&self) -> usize {
            2
        }
        fn max_len(&self) -> usize {
            4
        }
        fn predict(&self, x: &[f64], _: usize, t: usize, cond: Option<&[f64]>) -> Result<Vec<f64>> {
            Ok(match cond {
                Some(c) => x.iter().enumerate().map(|(i, v)| c[i % 2] + 0.01 * v * t as f64).collect(),
                None => x.iter().map(|v| 0.5 * v).collect(),
            })
        }
    }

    #[test]
    fn cosine_schedule_properties() {
        let s = NoiseSchedule::build(100, ScheduleKind::default()).unwrap();
        let mut prod = 1.0;
        for t in 1..=100 {
            assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
            prod *= s.alpha(t);
            assert_eq!(s.alpha_bar(t), prod);
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
        assert!(s.alpha_bar(100) < 0.01);
        assert!(s.alpha_bar(1) > 0.99);
        let one = NoiseSchedule::build(1, ScheduleKind::default()).unwrap();
        assert_eq!(one.alpha_bar(1), one.alpha(1));
        assert!(matches!(NoiseSchedule::build(0, ScheduleKind::default()), Err(Error::BadScheduleParams(_))));
        let bad = ScheduleKind::Linear { beta_start: 0.5, beta_end: 2.0 };
        assert!(matches!(NoiseSchedule::build(10, bad), Err(Error::BadScheduleParams(_))));
        let lin = NoiseSchedule::build(100, ScheduleKind::Linear { beta_start: 1e-4, beta_end: 0.02 }).unwrap();
        assert!(lin.alpha_bar(100) < 0.01);
    }

    #[test]
    fn posterior_at_first_step_is_x0() {
        let s = NoiseSchedule::build(100, ScheduleKind::default()).unwrap();
        let (c0, ct, var) = s.posterior(1);
        assert!((c0 - 1.0).abs() < 1e-12);
        assert_eq!(ct, 0.0);
        assert_eq!(var, 0.0);
    }

    #[test]
    fn q_sample_edges() {
        let s = NoiseSchedule::build(10, ScheduleKind::default()).unwrap();
        let x0 = [1.0, -2.0];
        let noise = [0.3, 0.4];
        assert_eq!(q_sample(&x0, 0, &noise, &s), x0.to_vec());
        let z = q_sample(&[0.0, 0.0], 5, &noise, &s);
        let k = (1.0 - s.alpha_bar(5)).sqrt();
        assert_eq!(z, vec![k * 0.3, k * 0.4]);
    }

    #[test]
    fn one_step_oracle_returns_x0() {
        let s = NoiseSchedule::build(1, ScheduleKind::default()).unwrap();
        let oracle = Oracle(vec![0.25, -1.5, 3.0]);
        let out = sample(&oracle, None, 1, 0.0, &s, 7).unwrap();
        assert_eq!(out, oracle.0);
    }

    #[test]
    fn guidance_endpoints_and_linearity() {
        let s = NoiseSchedule::build(20, ScheduleKind::default()).unwrap();
        let c = [1.0, -1.0];
        let x = [0.3, 0.7, -0.2, 0.1];
        let (xc, xu) = Split.predict_pair(&x, 2, 5, &c).unwrap();
        assert_eq!(guide(&xc, &xu, 1.0), xc);
        let g0 = guide(&xc, &xu, 0.0);
        let g2 = guide(&xc, &xu, 2.0);
        for i in 0..4 {
            assert!((g0[i] - xu[i]).abs() < 1e-15);
            assert!((g2[i] - (xu[i] + 2.0 * (xc[i] - xu[i]))).abs() < 1e-12);
        }
        let cond_only = sample(&Split, Some(&c), 2, 1.0, &s, 3).unwrap();
        let guided = sample(&Split, Some(&c), 2, 1.0, &s, 3).unwrap();
        assert_eq!(cond_only, guided);
        let uncond = sample(&Split, None, 2, 0.0, &s, 3).unwrap();
        assert_eq!(sample(&Split, Some(&c), 2, 0.0, &s, 3).unwrap(), uncond);
        assert!(matches!(sample(&Split, None, 5, 1.0, &s, 0), Err(Error::LengthExceedsMax { .. })));
    }

    fn tiny() -> DiffusionConfig {
        DiffusionConfig {
            feature_dim: 6,
            text_dim: 3,
            width: 8,
            heads: 2,
            depth: 1,
            ff: 16,
            max_len: 6,
            steps: 10,
            batch_size: 4,
            epochs: 2,
            ..Default::default()
        }
    }

    #[test]
    fn padded_frames_do_not_leak() {
        let model = Denoiser::new(tiny(), DType::F64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut x: Vec<f64> = (0..2 * 5 * 6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mask = Tensor::from_vec(vec![1.0f64, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0], (2, 5), &Device::Cpu).unwrap();
        let cond = Tensor::from_vec(vec![0.1f64, 0.2, 0.3, -0.1, 0.0, 0.5], (2, 3), &Device::Cpu).unwrap();
        let run = |x: &[f64]| {
            let xt = Tensor::from_vec(x.to_vec(), (2, 5, 6), &Device::Cpu).unwrap();
            model.forward(&xt, &[3, 7], Some(&cond), None, &mask).unwrap().to_vec3::<f64>().unwrap()
        };
        let a = run(&x);
        for v in &mut x[3 * 6..5 * 6] {
            *v = 42.0;
        }
        let b = run(&x);
        for t in 0..3 {
            for j in 0..6 {
                assert!((a[0][t][j] - b[0][t][j]).abs() < 1e-12);
            }
        }
        assert_eq!(a[0][3], vec![0.0; 6]);
        assert_eq!(a[1], b[1]);
    }

    #[test]
    fn full_dropout_ignores_text() {
        let cfg = DiffusionConfig { p_drop: 0.999_999_999, ..tiny() };
        let model = Denoiser::new(cfg, DType::F64).unwrap();
        let e1 = DiffusionExample { motion: vec![0.5; 12], frames: 2, conditions: vec![vec![1.0, 0.0, 0.0]] };
        let e2 = DiffusionExample { conditions: vec![vec![-3.0, 2.0, 9.0]], ..e1.clone() };
        let grads = |e: &DiffusionExample| {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let loss = batch_loss(&model, &[e], &mut rng).unwrap();
            let g = loss.backward().unwrap();
            let v = &model.store.named()["motion.input.weight"];
            g.get(v.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()
        };
        assert_eq!(grads(&e1), grads(&e2));
    }

    #[test]
    fn oracle_prediction_has_zero_loss() {
        let x = Tensor::from_vec(vec![1.0f64, 2.0, 3.0, 4.0], (1, 2, 2), &Device::Cpu).unwrap();
        let mask = Tensor::ones((1, 2), DType::F64, &Device::Cpu).unwrap();
        assert_eq!(masked_mse(&x, &x, &mask).unwrap().to_scalar::<f64>().unwrap(), 0.0);
    }

    #[test]
    fn seeded_sampling_reproducible() {
        let model = Denoiser::new(tiny(), DType::F32).unwrap();
        let c = [0.2, 0.1, -0.4];
        let a = sample(&model, Some(&c), 3, 2.5, &model.schedule, 9).unwrap();
        let b = sample(&model, Some(&c), 3, 2.5, &model.schedule, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
        assert!(matches!(sample(&model, Some(&c), 7, 2.5, &model.schedule, 9), Err(Error::LengthExceedsMax { .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let data: Vec<DiffusionExample> = (0..4)
            .map(|i| DiffusionExample { motion: vec![i as f64 * 0.1; 18], frames: 3, conditions: vec![vec![i as f64, 0.0, 1.0]] })
            .collect();
        let (model, log) = train_diffusion(&data, &tiny()).unwrap();
        assert_eq!(log.epoch_loss.len(), 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ckpt");
        model.save(&path).unwrap();
        let back = Denoiser::load(&path).unwrap();
        let c = [1.0, 0.0, 1.0];
        assert_eq!(
            sample(&model, Some(&c), 3, 15.0, &model.schedule, 1).unwrap(),
            sample(&back, Some(&c), 3, 15.0, &back.schedule, 1).unwrap()
        );
    }
}

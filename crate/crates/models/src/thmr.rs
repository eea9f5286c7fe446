//! THMR: dual transformer encoders mapping texts and motions into a shared
//! embedding space, trained with a symmetric InfoNCE objective.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, IndexOp, Tensor, D};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use handmotion_core::layout::FeatureSubset;
use handmotion_core::motion::FeatureSequence;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{key_padding_bias, log_softmax_last, masked_mean, Encoder, Linear, ParamStore};
use crate::tokenizer::Vocabulary;

pub const CHECKPOINT_KIND: &str = "thmr";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TextInputKind {
    /// Trainable token embeddings over a corpus vocabulary.
    Tokens,
    /// One precomputed vector per text, looked up by exact text.
    Precomputed { dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThmrConfig {
    pub latent_dim: usize,
    pub temperature: f64,
    pub lambda_nce: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub subset: FeatureSubset,
    pub width: usize,
    pub heads: usize,
    pub depth: usize,
    pub ff: usize,
    pub max_frames: usize,
    pub max_tokens: usize,
    pub text_input: TextInputKind,
    /// Enables the motion decoder and its reconstruction terms.
    pub reconstruction: bool,
    pub seed: u64,
}

impl Default for ThmrConfig {
    fn default() -> Self {
        Self {
            latent_dim: 256,
            temperature: 0.1,
            lambda_nce: 0.1,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            batch_size: 32,
            epochs: 100,
            subset: FeatureSubset::Full274,
            width: 256,
            heads: 4,
            depth: 4,
            ff: 1024,
            max_frames: 128,
            max_tokens: 64,
            text_input: TextInputKind::Tokens,
            reconstruction: false,
            seed: 0,
        }
    }
}

impl ThmrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("contrastive training needs batch size ≥ 2".into()));
        }
        if self.latent_dim == 0 || self.width == 0 || self.max_frames == 0 || self.max_tokens == 0 {
            return Err(Error::InvalidConfig("dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Symmetric cross-entropy over cosine-similarity logits divided by `tau`,
/// averaged over both retrieval directions. Row `i` of each input is a
/// matched pair.
pub fn infonce_loss(text: &Tensor, motion: &Tensor, tau: f64) -> Result<Tensor> {
    let (b, _) = text.dims2()?;
    let norm = |x: &Tensor| -> Result<Tensor> { Ok(x.broadcast_div(&x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?)?) };
    let t = norm(text)?;
    let m = norm(motion)?;
    let logits = (t.matmul(&m.t()?)? / tau)?;
    let eye = Tensor::eye(b, logits.dtype(), logits.device())?;
    let l_t2m = (log_softmax_last(&logits)? * &eye)?.sum_all()?;
    let l_m2t = (log_softmax_last(&logits.t()?.contiguous()?)? * &eye)?.sum_all()?;
    Ok(((l_t2m + l_m2t)? / (-2.0 * b as f64))?)
}

struct Decoder {
    input: Linear,
    pos: Tensor,
    encoder: Encoder,
    output: Linear,
}

pub struct Thmr {
    pub cfg: ThmrConfig,
    pub vocab: Option<Vocabulary>,
    pub precomputed: Option<BTreeMap<String, Vec<f32>>>,
    store: ParamStore,
    motion_in: Linear,
    motion_pos: Tensor,
    motion_enc: Encoder,
    motion_out: Linear,
    text_embed: Option<Tensor>,
    text_in: Option<Linear>,
    text_pos: Tensor,
    text_enc: Encoder,
    text_out: Linear,
    decoder: Option<Decoder>,
}

enum TextBatchInput {
    Ids(Tensor),
    Vectors(Tensor),
}

impl Thmr {
    pub fn new(
        cfg: ThmrConfig,
        vocab: Option<Vocabulary>,
        precomputed: Option<BTreeMap<String, Vec<f32>>>,
        dtype: DType,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamStore::new(cfg.seed, dtype);
        let w = cfg.width;
        let f = cfg.subset.width();
        let motion_in = Linear::new(&mut ps, "motion.input", f, w)?;
        let motion_pos = ps.normal("motion.pos", &[cfg.max_frames, w], 0.02)?;
        let motion_enc = Encoder::new(&mut ps, "motion.encoder", w, cfg.heads, cfg.ff, cfg.depth)?;
        let motion_out = Linear::new(&mut ps, "motion.output", w, cfg.latent_dim)?;
        let (text_embed, text_in) = match &cfg.text_input {
            TextInputKind::Tokens => {
                let v = vocab
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("token text input needs a vocabulary".into()))?;
                (Some(ps.normal("text.embed", &[v.len(), w], 1.0)?), None)
            }
            TextInputKind::Precomputed { dim } => {
                if precomputed.is_none() {
                    return Err(Error::InvalidConfig("precomputed text input needs an embedding table".into()));
                }
                (None, Some(Linear::new(&mut ps, "text.input", *dim, w)?))
            }
        };
        let text_pos = ps.normal("text.pos", &[cfg.max_tokens, w], 0.02)?;
        let text_enc = Encoder::new(&mut ps, "text.encoder", w, cfg.heads, cfg.ff, cfg.depth)?;
        let text_out = Linear::new(&mut ps, "text.output", w, cfg.latent_dim)?;
        let decoder = if cfg.reconstruction {
            Some(Decoder {
                input: Linear::new(&mut ps, "decoder.input", cfg.latent_dim, w)?,
                pos: ps.normal("decoder.pos", &[cfg.max_frames, w], 0.02)?,
                encoder: Encoder::new(&mut ps, "decoder.encoder", w, cfg.heads, cfg.ff, cfg.depth.max(1))?,
                output: Linear::new(&mut ps, "decoder.output", w, f)?,
            })
        } else {
            None
        };
        Ok(Self {
            cfg,
            vocab,
            precomputed,
            store: ps,
            motion_in,
            motion_pos,
            motion_enc,
            motion_out,
            text_embed,
            text_in,
            text_pos,
            text_enc,
            text_out,
            decoder,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    fn device(&self) -> &Device {
        self.store.device()
    }

    /// Center crop to at most `max_frames`.
    fn crop(&self, m: &FeatureSequence, rng: Option<&mut ChaCha8Rng>) -> Vec<f64> {
        let t = m.num_frames();
        let w = m.width();
        let keep = t.min(self.cfg.max_frames);
        let start = match rng {
            Some(r) if t > keep => r.gen_range(0..=t - keep),
            _ => (t - keep) / 2,
        };
        m.data[start * w..(start + keep) * w].to_vec()
    }

    fn motion_batch(&self, seqs: &[Vec<f64>]) -> Result<(Tensor, Tensor)> {
        let f = self.cfg.subset.width();
        let t_max = seqs.iter().map(|s| s.len() / f).max().unwrap_or(1).max(1);
        let b = seqs.len();
        let mut x = vec![0.0f64; b * t_max * f];
        let mut mask = vec![0.0f64; b * t_max];
        for (i, s) in seqs.iter().enumerate() {
            x[i * t_max * f..i * t_max * f + s.len()].copy_from_slice(s);
            for t in 0..s.len() / f {
                mask[i * t_max + t] = 1.0;
            }
        }
        let dt = self.store.dtype();
        Ok((
            Tensor::from_vec(x, (b, t_max, f), self.device())?.to_dtype(dt)?,
            Tensor::from_vec(mask, (b, t_max), self.device())?.to_dtype(dt)?,
        ))
    }

    fn encode_motion_tensor(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (_, t, _) = x.dims3()?;
        let h = self.motion_in.forward(x)?.broadcast_add(&self.motion_pos.i(..t)?)?;
        let bias = key_padding_bias(mask)?;
        let h = self.motion_enc.forward(&h, Some(&bias))?;
        self.motion_out.forward(&masked_mean(&h, mask)?)
    }

    fn text_batch(&self, texts: &[&str]) -> Result<(TextBatchInput, Tensor)> {
        let dt = self.store.dtype();
        let b = texts.len();
        match &self.cfg.text_input {
            TextInputKind::Tokens => {
                let vocab = self.vocab.as_ref().expect("checked at construction");
                let ids: Vec<Vec<u32>> = texts
                    .iter()
                    .map(|t| vocab.encode(t, self.cfg.max_tokens))
                    .collect::<Result<_>>()?;
                let l = ids.iter().map(Vec::len).max().unwrap_or(1);
                let mut flat = vec![0u32; b * l];
                let mut mask = vec![0.0f64; b * l];
                for (i, row) in ids.iter().enumerate() {
                    for (j, &id) in row.iter().enumerate() {
                        flat[i * l + j] = id;
                        mask[i * l + j] = 1.0;
                    }
                }
                Ok((
                    TextBatchInput::Ids(Tensor::from_vec(flat, (b, l), self.device())?),
                    Tensor::from_vec(mask, (b, l), self.device())?.to_dtype(dt)?,
                ))
            }
            TextInputKind::Precomputed { dim } => {
                let table = self.precomputed.as_ref().expect("checked at construction");
                let mut flat = Vec::with_capacity(b * dim);
                for t in texts {
                    let v = table
                        .get(*t)
                        .ok_or_else(|| Error::InvalidConfig(format!("no precomputed embedding for text `{t}`")))?;
                    if v.len() != *dim {
                        return Err(Error::FeatureWidthMismatch {
                            expected: *dim,
                            got: v.len(),
                        });
                    }
                    flat.extend_from_slice(v);
                }
                Ok((
                    TextBatchInput::Vectors(Tensor::from_vec(flat, (b, 1, *dim), self.device())?.to_dtype(dt)?),
                    Tensor::ones((b, 1), dt, self.device())?,
                ))
            }
        }
    }

    fn encode_text_tensor(&self, input: &TextBatchInput, mask: &Tensor) -> Result<Tensor> {
        let h = match input {
            TextBatchInput::Ids(ids) => {
                let (b, l) = ids.dims2()?;
                let table = self.text_embed.as_ref().expect("token model");
                table.index_select(&ids.flatten_all()?, 0)?.reshape((b, l, self.cfg.width))?
            }
            TextBatchInput::Vectors(v) => self.text_in.as_ref().expect("precomputed model").forward(v)?,
        };
        let l = h.dim(1)?;
        let h = h.broadcast_add(&self.text_pos.i(..l)?)?;
        let bias = key_padding_bias(mask)?;
        let h = self.text_enc.forward(&h, Some(&bias))?;
        self.text_out.forward(&masked_mean(&h, mask)?)
    }

    fn check_width(&self, m: &FeatureSequence) -> Result<()> {
        let expected = self.cfg.subset.width();
        if m.width() != expected || m.subset != self.cfg.subset {
            return Err(Error::FeatureWidthMismatch {
                expected,
                got: m.width(),
            });
        }
        Ok(())
    }

    pub fn encode_motions(&self, motions: &[&FeatureSequence]) -> Result<Vec<Vec<f64>>> {
        for m in motions {
            self.check_width(m)?;
        }
        let seqs: Vec<Vec<f64>> = motions.iter().map(|m| self.crop(m, None)).collect();
        let (x, mask) = self.motion_batch(&seqs)?;
        to_rows(&self.encode_motion_tensor(&x, &mask)?)
    }

    pub fn encode_motion(&self, m: &FeatureSequence) -> Result<Vec<f64>> {
        Ok(self.encode_motions(&[m])?.remove(0))
    }

    pub fn encode_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let (input, mask) = self.text_batch(texts)?;
        to_rows(&self.encode_text_tensor(&input, &mask)?)
    }

    pub fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.encode_texts(&[text])?.remove(0))
    }

    fn reconstruction_loss(&self, z_t: &Tensor, z_m: &Tensor, x: &Tensor, mask: &Tensor) -> Result<Option<Tensor>> {
        let Some(dec) = &self.decoder else { return Ok(None) };
        let (_, t, f) = x.dims3()?;
        let decode = |z: &Tensor| -> Result<Tensor> {
            let h = dec.input.forward(z)?.unsqueeze(1)?.broadcast_add(&dec.pos.i(..t)?)?;
            let bias = key_padding_bias(mask)?;
            dec.output.forward(&dec.encoder.forward(&h, Some(&bias))?)
        };
        let m = mask.unsqueeze(2)?;
        let denom = (mask.sum_all()? * f as f64)?;
        let mse = |y: Tensor| -> Result<Tensor> { Ok((y - x)?.sqr()?.broadcast_mul(&m)?.sum_all()?.div(&denom)?) };
        let r_m = mse(decode(z_m)?)?;
        let r_t = mse(decode(z_t)?)?;
        let align = (z_t - z_m)?.sqr()?.mean_all()?;
        Ok(Some(((r_m + r_t)? + align)?))
    }

    fn loss(&self, texts: &[&str], seqs: &[Vec<f64>]) -> Result<Option<Tensor>> {
        let (x, mask) = self.motion_batch(seqs)?;
        let z_m = self.encode_motion_tensor(&x, &mask)?;
        let (input, tmask) = self.text_batch(texts)?;
        let z_t = self.encode_text_tensor(&input, &tmask)?;
        let recon = self.reconstruction_loss(&z_t, &z_m, &x, &mask)?;
        let nce = if self.cfg.lambda_nce != 0.0 {
            Some((infonce_loss(&z_t, &z_m, self.cfg.temperature)? * self.cfg.lambda_nce)?)
        } else {
            None
        };
        Ok(match (nce, recon) {
            (Some(a), Some(b)) => Some((a + b)?),
            (a, b) => a.or(b),
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let extra = serde_json::json!({
            "vocab": self.vocab.as_ref().map(|v| v.tokens.clone()),
            "precomputed": self.precomputed,
        });
        Checkpoint::from_store(CHECKPOINT_KIND, serde_json::to_value(&self.cfg)?, extra, &self.store)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::InvalidConfig(format!("expected a {CHECKPOINT_KIND} checkpoint, got {}", ck.kind)));
        }
        let cfg: ThmrConfig = serde_json::from_value(ck.config.clone())?;
        let vocab = match ck.extra.get("vocab") {
            Some(Value::Array(_)) => Some(Vocabulary::from_tokens(serde_json::from_value(ck.extra["vocab"].clone())?)?),
            _ => None,
        };
        let precomputed = match ck.extra.get("precomputed") {
            Some(Value::Object(_)) => Some(serde_json::from_value(ck.extra["precomputed"].clone())?),
            _ => None,
        };
        let model = Self::new(cfg, vocab, precomputed, DType::F32)?;
        model.store.load(&ck.to_tensors(model.device())?)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn to_rows(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    Ok(t.to_dtype(DType::F64)?.to_vec2::<f64>()?)
}

#[derive(Debug, Clone)]
pub struct ThmrExample {
    pub motion: FeatureSequence,
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean loss per epoch (NaN when no step ran).
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
}

/// Trains a fresh model. Each step samples one text per motion. Batches
/// smaller than two are skipped, as are steps with no active loss term.
pub fn train_thmr(
    data: &[ThmrExample],
    cfg: &ThmrConfig,
    vocab: Option<Vocabulary>,
    precomputed: Option<BTreeMap<String, Vec<f32>>>,
) -> Result<(Thmr, TrainLog)> {
    if data.is_empty() || data.iter().any(|e| e.texts.is_empty()) {
        return Err(Error::EmptyDataset);
    }
    let model = Thmr::new(cfg.clone(), vocab, precomputed, DType::F32)?;
    for e in data {
        model.check_width(&e.motion)?;
    }
    let mut opt = AdamW::new(
        model.store.vars(),
        ParamsAdamW {
            lr: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7468_6d72);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let texts: Vec<&str> = chunk
                .iter()
                .map(|&i| data[i].texts[rng.gen_range(0..data[i].texts.len())].as_str())
                .collect();
            let seqs: Vec<Vec<f64>> = chunk.iter().map(|&i| model.crop(&data[i].motion, Some(&mut rng))).collect();
            let Some(loss) = model.loss(&texts, &seqs)? else { continue };
            let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(Error::InvalidConfig(format!("loss became non-finite at epoch {epoch}")));
            }
            opt.backward_step(&loss)?;
            total += value;
            count += 1;
            log.steps += 1;
        }
        let mean = if count > 0 { total / count as f64 } else { f64::NAN };
        log::info!("thmr epoch {epoch}: loss {mean:.5}");
        log.epoch_loss.push(mean);
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_infonce(t: &[Vec<f64>], m: &[Vec<f64>], tau: f64) -> f64 {
        let b = t.len();
        let cos = |a: &[f64], c: &[f64]| {
            let dot: f64 = a.iter().zip(c).map(|(x, y)| x * y).sum();
            dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * c.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        let s: Vec<Vec<f64>> = (0..b).map(|i| (0..b).map(|j| cos(&t[i], &m[j]) / tau).collect()).collect();
        let lse = |row: Vec<f64>| {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
        };
        let mut total = 0.0;
        for i in 0..b {
            total += lse((0..b).map(|j| s[i][j]).collect()) - s[i][i];
            total += lse((0..b).map(|j| s[j][i]).collect()) - s[i][i];
        }
        total / (2.0 * b as f64)
    }

    fn tensor(rows: &[Vec<f64>]) -> Tensor {
        let b = rows.len();
        let d = rows[0].len();
        Tensor::from_vec(rows.concat(), (b, d), &Device::Cpu).unwrap()
    }

    #[test]
    fn infonce_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for b in [2usize, 3, 7] {
            let t: Vec<Vec<f64>> = (0..b).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let m: Vec<Vec<f64>> = (0..b).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let got = infonce_loss(&tensor(&t), &tensor(&m), 0.1).unwrap().to_scalar::<f64>().unwrap();
            assert!((got - naive_infonce(&t, &m, 0.1)).abs() < 1e-10);
        }
    }

    #[test]
    fn infonce_uniform_and_separable() {
        let same = vec![vec![1.0, 0.0]; 4];
        let v = infonce_loss(&tensor(&same), &tensor(&same), 0.1).unwrap().to_scalar::<f64>().unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-12);
        let t = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let v = infonce_loss(&tensor(&t), &tensor(&t), 0.1).unwrap().to_scalar::<f64>().unwrap();
        assert!(v < 2f64.ln());
    }

    #[test]
    fn config_validation() {
        let cfg = ThmrConfig { batch_size: 1, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = ThmrConfig { temperature: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}

//! Seeded parameter store and the small set of layers both models share.
//!
//! Layers are built from primitive tensor ops only, so every parameter gets a
//! gradient on CPU and runs are reproducible from the store seed.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Module, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub struct ParamStore {
    dtype: DType,
    device: Device,
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            dtype,
            device: Device::Cpu,
            vars: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: &str, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::InvalidConfig(format!("duplicate parameter `{name}`")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let values = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        self.insert(name, values, shape)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let values = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.insert(name, values, shape)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        self.insert(name, vec![value; n], shape)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn named(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    /// Overwrites parameter values by name; shapes must match.
    pub fn load(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars {
            let t = tensors.get(name).ok_or_else(|| Error::MissingParameter(name.clone()))?;
            if t.dims() != var.dims() {
                return Err(Error::InvalidConfig(format!(
                    "parameter `{name}` has shape {:?}, checkpoint has {:?}",
                    var.dims(),
                    t.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    inner: candle_nn::Linear,
}

impl Linear {
    /// PyTorch-style init: weights and bias uniform in ±1/√fan_in.
    pub fn new(ps: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = ps.uniform(&format!("{name}.weight"), &[fan_out, fan_in], bound)?;
        let b = ps.uniform(&format!("{name}.bias"), &[fan_out], bound)?;
        Ok(Self {
            inner: candle_nn::Linear::new(w, Some(b)),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.inner.forward(x)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: ps.constant(&format!("{name}.weight"), &[dim], 1.0)?,
            beta: ps.constant(&format!("{name}.bias"), &[dim], 0.0)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&m)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

pub fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&m)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// Additive attention bias from a `[B, T]` validity mask (1 valid, 0 pad):
/// `[B, 1, 1, T]` with 0 for valid keys and a large negative value for pads.
pub fn key_padding_bias(mask: &Tensor) -> Result<Tensor> {
    let (b, t) = mask.dims2()?;
    let bias = ((mask.ones_like()? - mask)? * -1e9)?;
    Ok(bias.reshape((b, 1, 1, t))?)
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::InvalidConfig(format!("width {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(ps, &format!("{name}.q"), dim, dim)?,
            k: Linear::new(ps, &format!("{name}.k"), dim, dim)?,
            v: Linear::new(ps, &format!("{name}.v"), dim, dim)?,
            o: Linear::new(ps, &format!("{name}.o"), dim, dim)?,
            heads,
        })
    }

    /// `x`: `[B, T, C]`; `bias`: optional `[B, 1, 1, T]` additive key bias.
    pub fn forward(&self, x: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let (b, t, c) = x.dims3()?;
        let h = self.heads;
        let dh = c / h;
        let split = |y: Tensor| -> Result<Tensor> { Ok(y.reshape((b, t, h, dh))?.transpose(1, 2)?.contiguous()?) };
        let q = split(self.q.forward(x)?)?;
        let k = split(self.k.forward(x)?)?;
        let v = split(self.v.forward(x)?)?;
        let mut scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? / (dh as f64).sqrt())?;
        if let Some(bias) = bias {
            scores = scores.broadcast_add(bias)?;
        }
        let p = softmax_last(&scores)?;
        let out = p.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, t, c))?;
        self.o.forward(&out)
    }
}

/// Pre-norm transformer encoder layer.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

impl EncoderLayer {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, heads: usize, ff: usize) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), dim)?,
            attn: MultiHeadAttention::new(ps, &format!("{name}.attn"), dim, heads)?,
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), dim)?,
            ff1: Linear::new(ps, &format!("{name}.ff1"), dim, ff)?,
            ff2: Linear::new(ps, &format!("{name}.ff2"), ff, dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let x = (x + self.attn.forward(&self.ln1.forward(x)?, bias)?)?;
        let y = self.ff2.forward(&self.ff1.forward(&self.ln2.forward(&x)?)?.gelu()?)?;
        Ok((x + y)?)
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    layers: Vec<EncoderLayer>,
    ln: LayerNorm,
}

impl Encoder {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, heads: usize, ff: usize, depth: usize) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| EncoderLayer::new(ps, &format!("{name}.layers.{i}"), dim, heads, ff))
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            ln: LayerNorm::new(ps, &format!("{name}.ln"), dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward(&h, bias)?;
        }
        self.ln.forward(&h)
    }
}

/// Sinusoidal embedding of integer positions/timesteps, `[len(steps), dim]`.
pub fn sinusoidal(steps: &[f64], dim: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let half = dim / 2;
    let mut v = Vec::with_capacity(steps.len() * dim);
    for &s in steps {
        for i in 0..dim {
            let k = (i % half.max(1)) as f64;
            let freq = (-(10000f64.ln()) * k / half.max(1) as f64).exp();
            v.push(if i < half { (s * freq).sin() } else { (s * freq).cos() });
        }
    }
    Ok(Tensor::from_vec(v, (steps.len(), dim), device)?.to_dtype(dtype)?)
}

/// Mean over valid positions: `x` `[B, T, C]`, `mask` `[B, T]`.
pub fn masked_mean(x: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let m = mask.unsqueeze(2)?;
    let sum = x.broadcast_mul(&m)?.sum(1)?;
    let count = m.sum(1)?.clamp(1.0, f64::INFINITY)?;
    Ok(sum.broadcast_div(&count)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_parameters() {
        let mut a = ParamStore::new(3, DType::F32);
        let mut b = ParamStore::new(3, DType::F32);
        let x = a.normal("x", &[4, 5], 1.0).unwrap();
        let y = b.normal("x", &[4, 5], 1.0).unwrap();
        assert_eq!(x.to_vec2::<f32>().unwrap(), y.to_vec2::<f32>().unwrap());
        assert!(a.normal("x", &[1], 1.0).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0], [1000.0, 1000.0, -5.0]], &Device::Cpu).unwrap();
        let p = softmax_last(&x).unwrap().to_vec2::<f64>().unwrap();
        for row in &p {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((p[1][0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_normalizes() {
        let mut ps = ParamStore::new(0, DType::F64);
        let ln = LayerNorm::new(&mut ps, "ln", 4).unwrap();
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0, 4.0]], &Device::Cpu).unwrap();
        let y = ln.forward(&x).unwrap().to_vec2::<f64>().unwrap();
        let mean: f64 = y[0].iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn padded_keys_are_ignored() {
        let mut ps = ParamStore::new(1, DType::F64);
        let attn = MultiHeadAttention::new(&mut ps, "a", 8, 2).unwrap();
        let dev = Device::Cpu;
        let base: Vec<f64> = (0..5 * 8).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut other = base.clone();
        for v in &mut other[3 * 8..] {
            *v = 42.0;
        }
        let mask = Tensor::new(&[[1.0f64, 1.0, 1.0, 0.0, 0.0]], &dev).unwrap();
        let bias = key_padding_bias(&mask).unwrap();
        let run = |v: &Vec<f64>| {
            let x = Tensor::from_vec(v.clone(), (1, 5, 8), &dev).unwrap();
            attn.forward(&x, Some(&bias)).unwrap().narrow(1, 0, 3).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()
        };
        assert_eq!(run(&base), run(&other));
    }
}

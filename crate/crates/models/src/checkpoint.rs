//! Checkpoint container.
//!
//! Layout: magic `HMCK`, u32 version, u64 header length, UTF-8 JSON header
//! (model kind, config, extra metadata and a tensor manifest with per-tensor
//! shape, byte offset and SHA-256), then the tensor payload as little-endian
//! f32 in manifest order.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

const MAGIC: &[u8; 4] = b"HMCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    config: Value,
    extra: Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: Value,
    pub extra: Value,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

fn digest(values: &[f32]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

impl Checkpoint {
    pub fn from_store(kind: &str, config: Value, extra: Value, store: &ParamStore) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        for (name, var) in store.named() {
            let t = var.as_tensor().to_dtype(DType::F32)?;
            let values = t.flatten_all()?.to_vec1::<f32>()?;
            tensors.insert(name.clone(), (t.dims().to_vec(), values));
        }
        Ok(Self {
            kind: kind.to_string(),
            config,
            extra,
            tensors,
        })
    }

    pub fn to_tensors(&self, device: &Device) -> Result<BTreeMap<String, Tensor>> {
        self.tensors
            .iter()
            .map(|(name, (shape, values))| Ok((name.clone(), Tensor::from_vec(values.clone(), shape.as_slice(), device)?)))
            .collect()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::new();
        let mut offset = 0u64;
        for (name, (shape, values)) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset,
                sha256: digest(values),
            });
            offset += 4 * values.len() as u64;
        }
        let header = serde_json::to_vec(&Header {
            kind: self.kind.clone(),
            config: self.config.clone(),
            extra: self.extra.clone(),
            tensors: entries,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, values) in self.tensors.values() {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: &str| Error::checkpoint(path, m);
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let data = &bytes[16 + hlen..];
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let raw = data.get(start..start + 4 * n).ok_or_else(|| bad("truncated tensor data"))?;
            let values: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            if digest(&values) != e.sha256 {
                return Err(bad(&format!("checksum mismatch for `{}`", e.name)));
            }
            tensors.insert(e.name, (e.shape, values));
        }
        Ok(Self {
            kind: header.kind,
            config: header.config,
            extra: header.extra,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }

    /// SHA-256 of the encoded checkpoint.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.encode()?)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut ps = ParamStore::new(5, DType::F32);
        ps.normal("a.weight", &[3, 4], 0.7).unwrap();
        ps.uniform("b", &[5], 0.1).unwrap();
        let ck = Checkpoint::from_store("test", serde_json::json!({"width": 4}), Value::Null, &ps).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode().unwrap(), ck.encode().unwrap());

        let other = ParamStore::new(99, DType::F32);
        let mut other = other;
        other.normal("a.weight", &[3, 4], 0.7).unwrap();
        other.uniform("b", &[5], 0.1).unwrap();
        other.load(&back.to_tensors(&Device::Cpu).unwrap()).unwrap();
        let again = Checkpoint::from_store("test", serde_json::json!({"width": 4}), Value::Null, &other).unwrap();
        assert_eq!(again, ck);
    }

    #[test]
    fn corruption_detected() {
        let mut ps = ParamStore::new(5, DType::F32);
        ps.normal("w", &[8], 1.0).unwrap();
        let ck = Checkpoint::from_store("test", Value::Null, Value::Null, &ps).unwrap();
        let mut bytes = ck.encode().unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 0x40;
        assert!(matches!(Checkpoint::decode(&bytes, Path::new("x")), Err(Error::Checkpoint { .. })));
        assert!(Checkpoint::decode(b"nope", Path::new("x")).is_err());
    }
}

//! Text-motion datasets on disk: `pairs.jsonl` plus `motions/<id>.hmf`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use handmotion_core::motion::{read_motion, write_motion, MOTION_EXTENSION};
use handmotion_core::MotionSequence;
use handmotion_models::Thmr;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{create_dir, read_json, read_jsonl, write_jsonl};

pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const MOTIONS_DIR: &str = "motions";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub motion_id: String,
    pub texts: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub pairs: Vec<Pair>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let pairs: Vec<Pair> = read_jsonl(&root.join(PAIRS_FILE))?;
        for p in &pairs {
            if p.texts.is_empty() {
                return Err(Error::Config(format!("pair `{}` has no texts", p.motion_id)));
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            pairs,
        })
    }

    pub fn motion_path(&self, id: &str) -> PathBuf {
        self.root.join(MOTIONS_DIR).join(format!("{id}.{MOTION_EXTENSION}"))
    }

    pub fn motion(&self, id: &str) -> Result<MotionSequence> {
        let mut m = read_motion(&self.motion_path(id))?;
        m.id = id.to_string();
        Ok(m)
    }

    pub fn motions(&self) -> Result<Vec<MotionSequence>> {
        self.pairs.iter().map(|p| self.motion(&p.motion_id)).collect()
    }

    pub fn write(root: &Path, items: &[(Pair, MotionSequence)]) -> Result<Self> {
        create_dir(&root.join(MOTIONS_DIR))?;
        let pairs: Vec<Pair> = items.iter().map(|(p, _)| p.clone()).collect();
        for (p, m) in items {
            write_motion(&root.join(MOTIONS_DIR).join(format!("{}.{MOTION_EXTENSION}", p.motion_id)), m)?;
        }
        write_jsonl(&root.join(PAIRS_FILE), &pairs)?;
        Ok(Self {
            root: root.to_path_buf(),
            pairs,
        })
    }
}

/// Source of text embeddings for conditioning: a THMR checkpoint or a JSON
/// table `{text: [floats]}`.
pub enum TextEncoder {
    Thmr(Box<Thmr>),
    Table(BTreeMap<String, Vec<f64>>),
}

impl TextEncoder {
    pub fn load(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e == "json") {
            let table: BTreeMap<String, Vec<f64>> = read_json(path)?;
            let mut dims = table.values().map(Vec::len);
            let d = dims.next().ok_or_else(|| Error::Config(format!("{} has no embeddings", path.display())))?;
            if dims.any(|x| x != d) {
                return Err(Error::Config(format!("{}: embeddings differ in width", path.display())));
            }
            Ok(TextEncoder::Table(table))
        } else if path.exists() {
            Ok(TextEncoder::Thmr(Box::new(Thmr::load(path)?)))
        } else {
            Err(Error::MissingCheckpoint(path.to_path_buf()))
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TextEncoder::Thmr(m) => m.cfg.latent_dim,
            TextEncoder::Table(t) => t.values().next().map_or(0, Vec::len),
        }
    }

    pub fn encode(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        match self {
            TextEncoder::Thmr(m) => Ok(m.encode_texts(texts)?),
            TextEncoder::Table(t) => texts
                .iter()
                .map(|s| t.get(*s).cloned().ok_or_else(|| Error::Config(format!("no embedding for text `{s}`"))))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let items = vec![
            (Pair { motion_id: "a".into(), texts: vec!["x".into()] }, MotionSequence::rest("a", 3, 25.0)),
            (Pair { motion_id: "b".into(), texts: vec!["y".into(), "z".into()] }, MotionSequence::rest("b", 2, 25.0)),
        ];
        Dataset::write(dir.path(), &items).unwrap();
        let ds = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds.pairs.len(), 2);
        assert_eq!(ds.motion("b").unwrap().num_frames(), 2);
    }

    #[test]
    fn table_encoder() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.json");
        std::fs::write(&p, r#"{"hello": [1.0, 2.0], "bye": [0.0, 1.0]}"#).unwrap();
        let enc = TextEncoder::load(&p).unwrap();
        assert_eq!(enc.dim(), 2);
        assert_eq!(enc.encode(&["bye"]).unwrap(), vec![vec![0.0, 1.0]]);
        assert!(enc.encode(&["other"]).is_err());
        assert!(matches!(TextEncoder::load(&dir.path().join("no.ckpt")), Err(Error::MissingCheckpoint(_))));
    }
}

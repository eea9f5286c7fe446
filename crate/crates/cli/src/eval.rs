//! Retrieval and distribution metrics over generation repeats.

use std::path::{Path, PathBuf};

use handmotion_core::metrics::{diversity, fid, mean_std, multimodality, retrieval, text_similarity_correct, TEXT_SIMILARITY_THRESHOLD};
use handmotion_core::motion::{read_motion, select_subset, write_motion, MOTION_EXTENSION};
use handmotion_models::Thmr;
use log::info;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::io::{combine_hashes, create_dir, tree_hash};
use crate::stages::{generate_motion, load_generator};

pub const DEFAULT_REPEATS: usize = 4;
/// Upper bound on the number of disjoint pairs used for diversity.
pub const DIVERSITY_PAIRS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    #[default]
    M2m,
    M2t,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m2m" => Ok(EvalMode::M2m),
            "m2t" => Ok(EvalMode::M2t),
            _ => Err(Error::Config(format!("mode must be m2m or m2t, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawValues {
    #[serde(rename = "R1")]
    pub r1: Vec<f64>,
    #[serde(rename = "R3")]
    pub r3: Vec<f64>,
    #[serde(rename = "FID")]
    pub fid: Vec<f64>,
    pub diversity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub repeats: usize,
    pub samples: usize,
    #[serde(rename = "R1_mean")]
    pub r1_mean: f64,
    #[serde(rename = "R1_std")]
    pub r1_std: f64,
    #[serde(rename = "R3_mean")]
    pub r3_mean: f64,
    #[serde(rename = "R3_std")]
    pub r3_std: f64,
    #[serde(rename = "FID")]
    pub fid: f64,
    #[serde(rename = "FID_std")]
    pub fid_std: f64,
    pub diversity: f64,
    pub diversity_std: f64,
    /// Needs at least two repeats.
    pub multimodality: Option<f64>,
    pub raw: RawValues,
    pub config_fingerprint: String,
    pub input_hash: String,
}

/// Scores generation directories (one per repeat, each holding
/// `<motion_id>.hmf` for every ground-truth pair) against the dataset.
pub fn evaluate(mode: EvalMode, thmr: &Thmr, gen_dirs: &[PathBuf], gt: &Dataset, seed: u64) -> Result<EvalReport> {
    if gen_dirs.is_empty() {
        return Err(Error::Config("at least one generation directory is required".into()));
    }
    let subset = thmr.cfg.subset;
    let gt_feats: Vec<_> = gt.motions()?.iter().map(|m| select_subset(m, subset)).collect();
    let gt_emb = thmr.encode_motions(&gt_feats.iter().collect::<Vec<_>>())?;
    let text_emb = match mode {
        EvalMode::M2t => Some(thmr.encode_texts(&gt.pairs.iter().map(|p| p.texts[0].as_str()).collect::<Vec<_>>())?),
        EvalMode::M2m => None,
    };
    let n = gt.pairs.len();
    let mut raw = RawValues {
        r1: vec![],
        r3: vec![],
        fid: vec![],
        diversity: vec![],
    };
    let mut per_repeat = Vec::new();
    for (r, dir) in gen_dirs.iter().enumerate() {
        let feats: Vec<_> = gt
            .pairs
            .iter()
            .map(|p| Ok(select_subset(&read_motion(&dir.join(format!("{}.{MOTION_EXTENSION}", p.motion_id)))?, subset)))
            .collect::<Result<_>>()?;
        let emb = thmr.encode_motions(&feats.iter().collect::<Vec<_>>())?;
        let res = match &text_emb {
            None => retrieval(&emb, &gt_emb, |q, g| q == g, &[1, 3])?,
            Some(t) => retrieval(
                &emb,
                t,
                |q, g| q == g || text_similarity_correct(&t[q], &t[g], TEXT_SIMILARITY_THRESHOLD),
                &[1, 3],
            )?,
        };
        raw.r1.push(res.recall_at(1));
        raw.r3.push(res.recall_at(3));
        raw.fid.push(fid(&emb, &gt_emb)?);
        raw.diversity.push(diversity(&emb, DIVERSITY_PAIRS.min(n / 2), seed.wrapping_add(r as u64))?);
        per_repeat.push(emb);
    }
    let multimodality = if per_repeat.len() >= 2 {
        let groups: Vec<Vec<Vec<f64>>> = (0..n).map(|i| per_repeat.iter().map(|e| e[i].clone()).collect()).collect();
        Some(multimodality(&groups)?)
    } else {
        None
    };
    let (r1_mean, r1_std) = mean_std(&raw.r1);
    let (r3_mean, r3_std) = mean_std(&raw.r3);
    let (fid_mean, fid_std) = mean_std(&raw.fid);
    let (div_mean, div_std) = mean_std(&raw.diversity);
    let config_fingerprint = combine_hashes([
        ("thmr", thmr.to_checkpoint()?.fingerprint()?),
        ("mode", serde_json::to_string(&mode)?),
        ("seed", seed.to_string()),
        ("repeats", gen_dirs.len().to_string()),
    ]);
    let mut parts = vec![("gt", tree_hash(&gt.root)?)];
    for d in gen_dirs {
        parts.push(("gen", tree_hash(d)?));
    }
    Ok(EvalReport {
        mode,
        repeats: gen_dirs.len(),
        samples: n,
        r1_mean,
        r1_std,
        r3_mean,
        r3_std,
        fid: fid_mean,
        fid_std,
        diversity: div_mean,
        diversity_std: div_std,
        multimodality,
        raw,
        config_fingerprint,
        input_hash: combine_hashes(parts),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// Copies the ground-truth motions.
    Identity,
    Diffusion {
        ckpt: PathBuf,
        #[serde(default = "default_guidance")]
        guidance: f64,
    },
}

fn default_guidance() -> f64 {
    15.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub mode: EvalMode,
    pub thmr_ckpt: PathBuf,
    pub gt: PathBuf,
    pub generator: Generator,
    pub repeats: usize,
    pub seed: u64,
    /// Generation directories are written here as `gen_<r>`.
    pub work_dir: PathBuf,
}

/// Generates `repeats` seeded sets for the ground-truth texts (first text of
/// each pair, ground-truth length) and evaluates them.
pub fn evaluate_experiment(x: &Experiment) -> Result<EvalReport> {
    if !x.thmr_ckpt.exists() {
        return Err(Error::MissingCheckpoint(x.thmr_ckpt.clone()));
    }
    if x.repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let thmr = Thmr::load(&x.thmr_ckpt)?;
    let gt = Dataset::load(&x.gt)?;
    let generator = match &x.generator {
        Generator::Identity => None,
        Generator::Diffusion { ckpt, guidance } => Some((load_generator(ckpt, None)?, *guidance)),
    };
    let mut dirs = Vec::new();
    for r in 0..x.repeats {
        let dir = x.work_dir.join(format!("gen_{r}"));
        create_dir(&dir)?;
        for (i, p) in gt.pairs.iter().enumerate() {
            let target = dir.join(format!("{}.{MOTION_EXTENSION}", p.motion_id));
            match &generator {
                None => {
                    let src = gt.motion_path(&p.motion_id);
                    std::fs::copy(&src, &target).map_err(|e| Error::io(&src, e))?;
                }
                Some(((model, enc), guidance)) => {
                    let frames = gt.motion(&p.motion_id)?.num_frames().min(model.cfg.max_len);
                    let seed = x.seed.wrapping_mul(1_000_003).wrapping_add((r * gt.pairs.len() + i) as u64);
                    let m = generate_motion(model, enc, &p.texts[0], frames, *guidance, seed, &p.motion_id)?;
                    write_motion(&target, &m)?;
                }
            }
        }
        dirs.push(dir);
    }
    let report = evaluate(x.mode, &thmr, &dirs, &gt, x.seed)?;
    info!("R@1 {:.2} ± {:.2}, FID {:.4}", report.r1_mean, report.r1_std, report.fid);
    Ok(report)
}

pub fn load_thmr(path: &Path) -> Result<Thmr> {
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path.to_path_buf()));
    }
    Ok(Thmr::load(path)?)
}

//! The individual processing steps, shared by the subcommands and the
//! pipeline runner.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use handmotion_core::assigner::{
    assign_variants, build_candidate_variants, extract_segments, Assignment, DictionaryIndex, Filtered, FrameLabel,
};
use handmotion_core::hms::{anchors_for_location, describe_motion, Anchor, HmsConfig};
use handmotion_core::motion::{read_motion, select_subset, write_motion, MOTION_EXTENSION};
use handmotion_core::phonology::{
    assemble_prompt, attributes_to_lines, bundled_exemplars, generate_batch, postprocess_descriptions, AttributeLexicon,
    LlmClient, LlmRequest, PhonologyRecord,
};
use handmotion_core::stitcher::{read_hands, stitch, StitchConfig, HANDS_EXTENSION};
use handmotion_core::{MotionSequence, Skeleton};
use handmotion_models::checkpoint::Checkpoint;
use handmotion_models::diffusion::{train_diffusion, DiffusionExample, DiffusionLog};
use handmotion_models::thmr::{train_thmr, TextInputKind, ThmrExample, TrainLog};
use handmotion_models::{Denoiser, DiffusionConfig, Thmr, ThmrConfig, Vocabulary};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, TextEncoder};
use crate::error::{Error, Result};
use crate::io::{create_dir, file_stem, list_files, read_jsonl, write_jsonl};

pub const STITCH_REPORTS: &str = "reports.jsonl";
pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const VARIANTS_FILE: &str = "variants.jsonl";

pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Seed for one named item, derived from the global seed.
pub fn item_seed(seed: u64, name: &str) -> u64 {
    let d = Sha256::digest(format!("{seed}:{name}").as_bytes());
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

fn motion_file(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.{MOTION_EXTENSION}"))
}

// ---------------------------------------------------------------------------
// stitch
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchRecord {
    pub motion_id: String,
    pub iterations: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub mean_residual: f64,
    pub objective_trace: Vec<f64>,
}

/// Stitches every `body/<id>.hmf` with `hands/<id>.hhe` into `out/<id>.hmf`
/// and writes per-motion reports to `out/reports.jsonl`.
pub fn stitch_dir(
    body: &Path,
    hands: &Path,
    out: &Path,
    cfg: &StitchConfig,
    skeleton: &Skeleton,
    workers: usize,
) -> Result<Vec<StitchRecord>> {
    cfg.validate()?;
    let bodies = list_files(body, MOTION_EXTENSION)?;
    if bodies.is_empty() {
        return Err(Error::Config(format!("no .{MOTION_EXTENSION} files in {}", body.display())));
    }
    create_dir(out)?;
    let one = |path: &PathBuf| -> Result<StitchRecord> {
        let id = file_stem(path);
        let mut b = read_motion(path)?;
        b.id = id.clone();
        let h = read_hands(&hands.join(format!("{id}.{HANDS_EXTENSION}")))?;
        let (m, report) = stitch(&b, &h, skeleton, cfg)?;
        write_motion(&motion_file(out, &id), &m)?;
        let n = report.residuals.len().max(1) as f64;
        Ok(StitchRecord {
            motion_id: id,
            iterations: report.iterations,
            initial_objective: report.objective_trace[0],
            final_objective: *report.objective_trace.last().unwrap(),
            mean_residual: report.residuals.iter().sum::<f64>() / n,
            objective_trace: report.objective_trace,
        })
    };
    let records: Vec<StitchRecord> =
        worker_pool(workers)?.install(|| bodies.par_iter().map(one).collect::<Result<Vec<_>>>())?;
    write_jsonl(&out.join(STITCH_REPORTS), &records)?;
    info!("stitched {} motions into {}", records.len(), out.display());
    Ok(records)
}

// ---------------------------------------------------------------------------
// segments
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStream {
    pub motion_id: String,
    pub frames: Vec<FrameLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub motion_id: String,
    pub segment_id: String,
    pub label: u32,
    pub start: usize,
    /// Inclusive.
    pub end: usize,
}

/// Segments every label stream; runs of the same label closer than `m`
/// frames are merged.
pub fn segment_streams(streams: &[LabelStream], conf: f64, m: usize) -> Vec<SegmentRecord> {
    let mut out = Vec::new();
    for s in streams {
        for (k, seg) in extract_segments(&s.frames, conf, m, m).into_iter().enumerate() {
            out.push(SegmentRecord {
                motion_id: s.motion_id.clone(),
                segment_id: format!("{}_s{k}", s.motion_id),
                label: seg.label,
                start: seg.start,
                end: seg.end,
            });
        }
    }
    out
}

pub fn segments_file(labels: &Path, conf: f64, m: usize, out: &Path) -> Result<Vec<SegmentRecord>> {
    if !(0.0..=1.0).contains(&conf) || m == 0 {
        return Err(Error::Config(format!("need 0 <= conf <= 1 and m >= 1, got conf {conf}, m {m}")));
    }
    let streams: Vec<LabelStream> = read_jsonl(labels)?;
    let segs = segment_streams(&streams, conf, m);
    write_jsonl(out, &segs)?;
    Ok(segs)
}

/// Cuts each segment out of `motions/<motion_id>.hmf` into
/// `out/<segment_id>.hmf`.
pub fn slice_segments(segs: &[SegmentRecord], motions: &Path, out: &Path) -> Result<()> {
    create_dir(out)?;
    for s in segs {
        let m = read_motion(&motion_file(motions, &s.motion_id))?;
        let cut = m.slice(s.segment_id.clone(), s.start, s.end)?;
        write_motion(&motion_file(out, &s.segment_id), &cut)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// hms
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmsRecord {
    pub motion_id: String,
    pub gloss_id: String,
    pub channels: BTreeMap<String, Vec<String>>,
    pub block: String,
}

pub fn record_anchors(r: &PhonologyRecord) -> Result<Vec<Anchor>> {
    let mut out = Vec::new();
    for loc in r.locations() {
        for a in anchors_for_location(loc)? {
            if !out.contains(&a) {
                out.push(a);
            }
        }
    }
    Ok(out)
}

/// Runs HMS on `motions/<gloss_id>.hmf` for every phonology record that has
/// a motion.
pub fn hms_records(
    motions: &Path,
    records: &[PhonologyRecord],
    cfg: &HmsConfig,
    skeleton: &Skeleton,
    workers: usize,
) -> Result<Vec<HmsRecord>> {
    let present: Vec<&PhonologyRecord> = records
        .iter()
        .filter(|r| {
            let ok = motion_file(motions, &r.gloss_id).exists();
            if !ok {
                warn!("no motion for gloss {}", r.gloss_id);
            }
            ok
        })
        .collect();
    let one = |r: &&PhonologyRecord| -> Result<HmsRecord> {
        let mut m = read_motion(&motion_file(motions, &r.gloss_id))?;
        m.id = r.gloss_id.clone();
        let (table, block) = describe_motion(&m, skeleton, &record_anchors(r)?, r.used_hands(), cfg)?;
        Ok(HmsRecord {
            motion_id: m.id.clone(),
            gloss_id: r.gloss_id.clone(),
            channels: table.processed_map(),
            block,
        })
    };
    worker_pool(workers)?.install(|| present.par_iter().map(one).collect())
}

// ---------------------------------------------------------------------------
// describe
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescribeSettings {
    pub model: String,
    pub temperature: f64,
    pub max_in_flight: usize,
}

impl Default for DescribeSettings {
    fn default() -> Self {
        Self {
            model: "gemini-2.5-pro".into(),
            temperature: 0.0,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionRecord {
    pub gloss_id: String,
    pub variant: String,
    pub with_hms: bool,
    pub descriptions: [String; 3],
}

/// One request per record. The HMS block is included when `hms` has one
/// for the gloss.
pub fn build_requests(
    records: &[PhonologyRecord],
    hms: Option<&BTreeMap<String, String>>,
    settings: &DescribeSettings,
    seed: u64,
) -> Result<Vec<LlmRequest>> {
    let lex = AttributeLexicon::bundled();
    let fewshot = bundled_exemplars();
    records
        .iter()
        .map(|r| {
            let s = item_seed(seed, &r.gloss_id);
            let lines = attributes_to_lines(r, &lex, s)?;
            let block = hms.and_then(|h| h.get(&r.gloss_id)).map(String::as_str);
            Ok(LlmRequest {
                model: settings.model.clone(),
                prompt: assemble_prompt(&lines, block, &fewshot),
                temperature: settings.temperature,
                seed: s,
            })
        })
        .collect()
}

pub fn describe_records(
    records: &[PhonologyRecord],
    hms: Option<&BTreeMap<String, String>>,
    client: &dyn LlmClient,
    settings: &DescribeSettings,
    seed: u64,
) -> Result<Vec<DescriptionRecord>> {
    let reqs = build_requests(records, hms, settings, seed)?;
    let responses = generate_batch(&reqs, client, settings.max_in_flight);
    records
        .iter()
        .zip(responses)
        .map(|(r, resp)| {
            let resp = resp.map_err(|e| Error::stage("describe", format!("{}: {e}", r.gloss_id)))?;
            Ok(DescriptionRecord {
                gloss_id: r.gloss_id.clone(),
                variant: r.gloss_id.clone(),
                with_hms: hms.is_some_and(|h| h.contains_key(&r.gloss_id)),
                descriptions: postprocess_descriptions(&resp, r),
            })
        })
        .collect()
}

pub fn hms_blocks(records: &[HmsRecord]) -> BTreeMap<String, String> {
    records.iter().map(|r| (r.gloss_id.clone(), r.block.clone())).collect()
}

// ---------------------------------------------------------------------------
// train-thmr
// ---------------------------------------------------------------------------

pub fn train_thmr_on(
    data: &Dataset,
    cfg: &ThmrConfig,
    precomputed: Option<BTreeMap<String, Vec<f32>>>,
) -> Result<(Thmr, TrainLog)> {
    cfg.validate()?;
    let examples: Vec<ThmrExample> = data
        .pairs
        .iter()
        .map(|p| {
            Ok(ThmrExample {
                motion: select_subset(&data.motion(&p.motion_id)?, cfg.subset),
                texts: p.texts.clone(),
            })
        })
        .collect::<Result<_>>()?;
    let vocab = match cfg.text_input {
        TextInputKind::Tokens => Some(Vocabulary::build(
            data.pairs.iter().flat_map(|p| p.texts.iter().map(String::as_str)),
            1,
        )),
        TextInputKind::Precomputed { .. } => None,
    };
    if matches!(cfg.text_input, TextInputKind::Precomputed { .. }) && precomputed.is_none() {
        return Err(Error::Config("precomputed text input needs an embedding table".into()));
    }
    let (model, log) = train_thmr(&examples, cfg, vocab, precomputed)?;
    info!("trained THMR: {} steps, final loss {:?}", log.steps, log.epoch_loss.last());
    Ok((model, log))
}

// ---------------------------------------------------------------------------
// assign
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEmbedding {
    pub motion_id: String,
    pub word: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantEmbedding {
    pub variant_id: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub motion_id: String,
    pub variant_id: Assignment,
}

/// Assigns every sample among the candidate variants of its word. Samples
/// whose word has no candidate with an embedding are filtered.
pub fn assign_embeddings(
    samples: &[SampleEmbedding],
    variants: &[VariantEmbedding],
    index: &DictionaryIndex,
) -> Result<Vec<AssignmentRecord>> {
    let variant_map: BTreeMap<&str, &Vec<f64>> =
        variants.iter().map(|v| (v.variant_id.as_str(), &v.embedding)).collect();
    let mut by_word: BTreeMap<&str, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for s in samples {
        by_word.entry(&s.word).or_default().insert(s.motion_id.clone(), s.embedding.clone());
    }
    let mut out = Vec::new();
    for (word, group) in by_word {
        let candidates: BTreeMap<String, Vec<f64>> = match build_candidate_variants(word, index) {
            Ok(c) => c
                .into_iter()
                .filter_map(|g| variant_map.get(g.as_str()).map(|e| (g, (*e).clone())))
                .collect(),
            Err(handmotion_core::Error::UnknownWord(_)) => BTreeMap::new(),
            Err(e) => return Err(e.into()),
        };
        if candidates.is_empty() {
            warn!("no dictionary variant for word `{word}`; {} samples filtered", group.len());
            out.extend(group.keys().map(|id| AssignmentRecord {
                motion_id: id.clone(),
                variant_id: Assignment::Filtered(Filtered::Filtered),
            }));
            continue;
        }
        for (id, a) in assign_variants(&group, &candidates)? {
            out.push(AssignmentRecord {
                motion_id: id,
                variant_id: a,
            });
        }
    }
    out.sort_by(|a, b| a.motion_id.cmp(&b.motion_id));
    Ok(out)
}

pub fn assign_dir(embeddings: &Path, index: &DictionaryIndex, out: &Path) -> Result<Vec<AssignmentRecord>> {
    let samples: Vec<SampleEmbedding> = read_jsonl(&embeddings.join(SAMPLES_FILE))?;
    let variants: Vec<VariantEmbedding> = read_jsonl(&embeddings.join(VARIANTS_FILE))?;
    let records = assign_embeddings(&samples, &variants, index)?;
    write_jsonl(out, &records)?;
    Ok(records)
}

// ---------------------------------------------------------------------------
// train-diffusion / generate
// ---------------------------------------------------------------------------

/// Longer motions are cut to their first `max_len` frames.
pub fn diffusion_examples(data: &Dataset, enc: &TextEncoder, max_len: usize) -> Result<Vec<DiffusionExample>> {
    data.pairs
        .iter()
        .map(|p| {
            let m = data.motion(&p.motion_id)?;
            let frames = m.num_frames().min(max_len);
            let texts: Vec<&str> = p.texts.iter().map(String::as_str).collect();
            Ok(DiffusionExample {
                motion: m.data()[..frames * m.data().len() / m.num_frames()].to_vec(),
                frames,
                conditions: enc.encode(&texts)?,
            })
        })
        .collect()
}

/// Path of the text encoder as stored in the checkpoint: relative to the
/// checkpoint's directory when it sits there, absolute otherwise.
fn stored_encoder_path(encoder: &Path, ckpt: &Path) -> String {
    let abs = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let enc = abs(encoder);
    let dir = ckpt.parent().map(abs);
    match (enc.parent(), dir, enc.file_name()) {
        (Some(a), Some(b), Some(name)) if a == b => name.to_string_lossy().into_owned(),
        _ => enc.to_string_lossy().into_owned(),
    }
}

pub fn train_diffusion_on(
    data: &Dataset,
    encoder_path: &Path,
    cfg: &DiffusionConfig,
    out: &Path,
) -> Result<(Denoiser, DiffusionLog)> {
    let enc = TextEncoder::load(encoder_path)?;
    let mut cfg = cfg.clone();
    if cfg.text_dim != enc.dim() {
        info!("text_dim set to {} to match the text encoder", enc.dim());
        cfg.text_dim = enc.dim();
    }
    cfg.validate()?;
    let examples = diffusion_examples(data, &enc, cfg.max_len)?;
    let (model, log) = train_diffusion(&examples, &cfg)?;
    let mut ck = model.to_checkpoint()?;
    ck.extra = json!({ "text_encoder": stored_encoder_path(encoder_path, out) });
    crate::io::ensure_parent(out)?;
    ck.save(out)?;
    Ok((model, log))
}

/// Loads a diffusion checkpoint and the text encoder recorded in it, unless
/// one is given.
pub fn load_generator(ckpt: &Path, encoder: Option<&Path>) -> Result<(Denoiser, TextEncoder)> {
    if !ckpt.exists() {
        return Err(Error::MissingCheckpoint(ckpt.to_path_buf()));
    }
    let ck = Checkpoint::load(ckpt)?;
    let model = Denoiser::from_checkpoint(&ck)?;
    let enc_path = match encoder {
        Some(p) => p.to_path_buf(),
        None => {
            let stored = ck.extra.get("text_encoder").and_then(|v| v.as_str()).ok_or_else(|| {
                Error::Config(format!("{} records no text encoder; pass --text-encoder", ckpt.display()))
            })?;
            ckpt.parent().unwrap_or(Path::new(".")).join(stored)
        }
    };
    Ok((model, TextEncoder::load(&enc_path)?))
}

pub fn generate_motion(
    model: &Denoiser,
    enc: &TextEncoder,
    text: &str,
    frames: usize,
    guidance: f64,
    seed: u64,
    id: &str,
) -> Result<MotionSequence> {
    let cond = enc.encode(&[text])?.remove(0);
    Ok(model.generate(&cond, frames, guidance, seed, id)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use handmotion_core::assigner::FrameLabel;

    fn stream(labels: &[(u32, f64)]) -> Vec<FrameLabel> {
        labels.iter().map(|&(label, confidence)| FrameLabel { label, confidence }).collect()
    }

    #[test]
    fn segment_ids_are_per_motion() {
        let mut frames = stream(&[(3, 0.9); 8]);
        frames.extend(stream(&[(0, 0.1); 4]));
        frames.extend(stream(&[(5, 0.9); 6]));
        let s = segment_streams(&[LabelStream { motion_id: "ep".into(), frames }], 0.5, 6);
        let ids: Vec<_> = s.iter().map(|r| (r.segment_id.as_str(), r.label, r.start, r.end)).collect();
        assert_eq!(ids, vec![("ep_s0", 3, 0, 7), ("ep_s1", 5, 12, 17)]);
    }

    #[test]
    fn unknown_words_are_filtered() {
        let index = DictionaryIndex {
            glosses: BTreeMap::from([("A".to_string(), vec!["apple".to_string()])]),
        };
        let samples = vec![
            SampleEmbedding { motion_id: "x".into(), word: "pear".into(), embedding: vec![1.0, 0.0] },
            SampleEmbedding { motion_id: "y".into(), word: "apple".into(), embedding: vec![1.0, 0.1] },
        ];
        let variants = vec![VariantEmbedding { variant_id: "A".into(), embedding: vec![1.0, 0.0] }];
        let out = assign_embeddings(&samples, &variants, &index).unwrap();
        assert_eq!(out[0].variant_id, Assignment::Filtered(Filtered::Filtered));
        assert_eq!(out[1].variant_id, Assignment::Variant("A".into()));
        assert_eq!(serde_json::to_string(&out[0]).unwrap(), r#"{"motion_id":"x","variant_id":"FILTERED"}"#);
    }

    #[test]
    fn item_seeds_differ_by_name() {
        assert_ne!(item_seed(0, "A"), item_seed(0, "B"));
        assert_eq!(item_seed(7, "A"), item_seed(7, "A"));
    }
}

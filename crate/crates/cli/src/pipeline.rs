//! Stage orchestration with content-hash manifests.
//!
//! Each stage hashes its inputs (file trees plus its config section) and
//! writes `out/manifests/<stage>.json`. A stage is skipped when the recorded
//! input hash matches and its outputs are unchanged on disk.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use handmotion_core::assigner::DictionaryIndex;
use handmotion_core::hms::HmsConfig;
use handmotion_core::motion::{read_motion, select_subset, MOTION_EXTENSION};
use handmotion_core::phonology::{client_from_spec, localize_handedness, read_records};
use handmotion_core::stitcher::StitchConfig;
use handmotion_core::{MotionSequence, Skeleton};
use handmotion_models::{DiffusionConfig, ThmrConfig};
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataset::{Dataset, Pair};
use crate::error::{Error, Result};
use crate::eval::{evaluate_experiment, load_thmr, EvalMode, Experiment, Generator, DEFAULT_REPEATS};
use crate::io::{combine_hashes, read_json, read_jsonl, tree_hash, write_json, write_jsonl};
use crate::stages::{
    assign_dir, describe_records, hms_blocks, hms_records, item_seed, segments_file, slice_segments, stitch_dir,
    train_diffusion_on, train_thmr_on, DescribeSettings, DescriptionRecord, HmsRecord, SampleEmbedding,
    SegmentRecord, VariantEmbedding, SAMPLES_FILE, VARIANTS_FILE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stitch,
    Segments,
    Hms,
    Describe,
    TrainThmr,
    Assign,
    TrainDiffusion,
    Eval,
}

impl Stage {
    /// Dependency order.
    pub const ALL: [Stage; 8] = [
        Stage::Stitch,
        Stage::Segments,
        Stage::Hms,
        Stage::Describe,
        Stage::TrainThmr,
        Stage::Assign,
        Stage::TrainDiffusion,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Stitch => "stitch",
            Stage::Segments => "segments",
            Stage::Hms => "hms",
            Stage::Describe => "describe",
            Stage::TrainThmr => "train_thmr",
            Stage::Assign => "assign",
            Stage::TrainDiffusion => "train_diffusion",
            Stage::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub body: PathBuf,
    pub hands: PathBuf,
    pub labels: PathBuf,
    pub phonology: PathBuf,
    pub dictionary: PathBuf,
    pub corpus: PathBuf,
    /// `fixtures:DIR` (DIR relative to the config file) or an HTTP(S) URL.
    pub llm: String,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            body: "body".into(),
            hands: "hands".into(),
            labels: "labels.jsonl".into(),
            phonology: "phonology.jsonl".into(),
            dictionary: "dictionary.json".into(),
            corpus: "corpus.json".into(),
            llm: "fixtures:llm".into(),
            out: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentSettings {
    pub m: usize,
    pub conf: f64,
}

impl Default for SegmentSettings {
    fn default() -> Self {
        Self {
            m: handmotion_core::assigner::DEFAULT_MIN_RUN,
            conf: handmotion_core::assigner::DEFAULT_CONF_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PipelineGenerator {
    Identity,
    /// Uses the diffusion checkpoint trained by the pipeline.
    Diffusion { guidance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub mode: EvalMode,
    pub repeats: usize,
    pub generator: PipelineGenerator,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            mode: EvalMode::M2m,
            repeats: DEFAULT_REPEATS,
            generator: PipelineGenerator::Identity,
        }
    }
}

/// Pseudo-gloss label ids to the words they stand for.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub label_words: BTreeMap<u32, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub workers: usize,
    pub stages: Vec<Stage>,
    pub paths: Paths,
    pub stitch: StitchConfig,
    pub segments: SegmentSettings,
    pub hms: HmsConfig,
    pub describe: DescribeSettings,
    pub thmr: ThmrConfig,
    pub diffusion: DiffusionConfig,
    pub eval: EvalSettings,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 2,
            stages: Stage::ALL.to_vec(),
            paths: Paths::default(),
            stitch: StitchConfig::default(),
            segments: SegmentSettings::default(),
            hms: HmsConfig::default(),
            describe: DescribeSettings::default(),
            thmr: ThmrConfig::default(),
            diffusion: DiffusionConfig::default(),
            eval: EvalSettings::default(),
            base: PathBuf::from("."),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_json(path)?;
        cfg.base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    pub fn out(&self) -> PathBuf {
        self.resolve(&self.paths.out)
    }

    fn llm_spec(&self) -> String {
        match self.paths.llm.strip_prefix("fixtures:") {
            Some(dir) => format!("fixtures:{}", self.resolve(Path::new(dir)).display()),
            None => self.paths.llm.clone(),
        }
    }

    fn llm_dir(&self) -> Option<PathBuf> {
        self.paths.llm.strip_prefix("fixtures:").map(|d| self.resolve(Path::new(d)))
    }

    pub fn validate(&self) -> Result<()> {
        self.stitch.validate()?;
        self.thmr.validate()?;
        self.diffusion.validate()?;
        if self.eval.repeats == 0 {
            return Err(Error::Config("eval.repeats must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: Stage,
    pub input_hash: String,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub executed: Vec<Stage>,
    pub skipped: Vec<Stage>,
}

/// Fixed layout of the artifact directory.
pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn stitched(&self) -> PathBuf {
        self.out.join("stitched")
    }
    pub fn segments(&self) -> PathBuf {
        self.out.join("segments.jsonl")
    }
    pub fn segment_motions(&self) -> PathBuf {
        self.out.join("segments")
    }
    pub fn hms(&self) -> PathBuf {
        self.out.join("hms.jsonl")
    }
    pub fn descriptions(&self) -> PathBuf {
        self.out.join("descriptions.jsonl")
    }
    pub fn thmr_data(&self) -> PathBuf {
        self.out.join("thmr_data")
    }
    pub fn thmr(&self) -> PathBuf {
        self.out.join("thmr.ckpt")
    }
    pub fn embeddings(&self) -> PathBuf {
        self.out.join("embeddings")
    }
    pub fn assignments(&self) -> PathBuf {
        self.out.join("assignments.jsonl")
    }
    pub fn dataset(&self) -> PathBuf {
        self.out.join("dataset")
    }
    pub fn diffusion(&self) -> PathBuf {
        self.out.join("diffusion.ckpt")
    }
    pub fn eval(&self) -> PathBuf {
        self.out.join("eval")
    }
    pub fn report(&self) -> PathBuf {
        self.eval().join("report.json")
    }
    pub fn manifest(&self, s: Stage) -> PathBuf {
        self.out.join("manifests").join(format!("{}.json", s.name()))
    }
}

struct StageIo {
    inputs: Vec<PathBuf>,
    config: Value,
    outputs: Vec<PathBuf>,
}

fn stage_io(cfg: &PipelineConfig, l: &Layout, s: Stage) -> Result<StageIo> {
    let p = &cfg.paths;
    let r = |x: &Path| cfg.resolve(x);
    let seed = json!(cfg.seed);
    let (inputs, config, outputs) = match s {
        Stage::Stitch => (vec![r(&p.body), r(&p.hands)], json!(cfg.stitch), vec![l.stitched()]),
        Stage::Segments => (
            vec![r(&p.labels), l.stitched()],
            json!(cfg.segments),
            vec![l.segments(), l.segment_motions()],
        ),
        Stage::Hms => (vec![l.stitched(), r(&p.phonology)], json!(cfg.hms), vec![l.hms()]),
        Stage::Describe => {
            let mut inputs = vec![r(&p.phonology), l.hms()];
            inputs.extend(cfg.llm_dir());
            (inputs, json!({"describe": cfg.describe, "llm": p.llm, "seed": seed}), vec![l.descriptions()])
        }
        Stage::TrainThmr => (
            vec![l.stitched(), l.segments(), l.segment_motions(), l.descriptions(), r(&p.dictionary), r(&p.corpus)],
            json!({"thmr": cfg.thmr, "seed": seed}),
            vec![l.thmr_data(), l.thmr()],
        ),
        Stage::Assign => (
            vec![
                l.thmr(),
                l.stitched(),
                l.segments(),
                l.segment_motions(),
                l.descriptions(),
                r(&p.dictionary),
                r(&p.corpus),
            ],
            Value::Null,
            vec![l.embeddings(), l.assignments(), l.dataset()],
        ),
        Stage::TrainDiffusion => (
            vec![l.dataset(), l.thmr()],
            json!({"diffusion": cfg.diffusion, "seed": seed}),
            vec![l.diffusion()],
        ),
        Stage::Eval => {
            let mut inputs = vec![l.dataset(), l.thmr()];
            if matches!(cfg.eval.generator, PipelineGenerator::Diffusion { .. }) {
                inputs.push(l.diffusion());
            }
            (inputs, json!({"eval": cfg.eval, "seed": seed}), vec![l.eval()])
        }
    };
    Ok(StageIo {
        inputs,
        config,
        outputs,
    })
}

fn input_hash(s: Stage, io: &StageIo) -> Result<String> {
    let mut parts = vec![("stage", s.name().to_string()), ("config", serde_json::to_string(&io.config)?)];
    for p in &io.inputs {
        if !p.exists() {
            return Err(Error::stage(s.name(), format!("missing input {}", p.display())));
        }
        parts.push(("input", tree_hash(p)?));
    }
    Ok(combine_hashes(parts))
}

fn output_hashes(l: &Layout, io: &StageIo) -> Result<BTreeMap<String, String>> {
    io.outputs
        .iter()
        .map(|p| {
            let rel = p.strip_prefix(&l.out).unwrap_or(p).to_string_lossy().into_owned();
            Ok((rel, tree_hash(p)?))
        })
        .collect()
}

fn is_current(l: &Layout, s: Stage, io: &StageIo, hash: &str) -> bool {
    let Ok(m) = read_json::<Manifest>(&l.manifest(s)) else {
        return false;
    };
    m.input_hash == hash && io.outputs.iter().all(|p| p.exists()) && output_hashes(l, io).is_ok_and(|o| o == m.outputs)
}

fn clear(paths: &[PathBuf]) -> Result<()> {
    for p in paths {
        let res = if p.is_dir() {
            std::fs::remove_dir_all(p)
        } else if p.exists() {
            std::fs::remove_file(p)
        } else {
            Ok(())
        };
        res.map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

/// Runs the configured stages in dependency order, skipping those whose
/// inputs and outputs are unchanged since their last run.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let l = Layout { out: cfg.out() };
    let wanted: BTreeSet<Stage> = cfg.stages.iter().copied().collect();
    let mut outcome = PipelineOutcome::default();
    for s in Stage::ALL.into_iter().filter(|s| wanted.contains(s)) {
        let io = stage_io(cfg, &l, s)?;
        let hash = input_hash(s, &io)?;
        if is_current(&l, s, &io, &hash) {
            info!("stage {}: up to date", s.name());
            outcome.skipped.push(s);
            continue;
        }
        info!("stage {}: running", s.name());
        clear(&io.outputs)?;
        run_stage(cfg, &l, s).map_err(|e| e.in_stage(s.name()))?;
        let manifest = Manifest {
            stage: s,
            input_hash: hash,
            outputs: output_hashes(&l, &io)?,
        };
        write_json(&l.manifest(s), &manifest)?;
        outcome.executed.push(s);
    }
    Ok(outcome)
}

fn motion_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.{MOTION_EXTENSION}"))
}

fn load_motion(dir: &Path, id: &str) -> Result<MotionSequence> {
    let mut m = read_motion(&motion_path(dir, id))?;
    m.id = id.to_string();
    Ok(m)
}

struct Lookup {
    descriptions: BTreeMap<String, DescriptionRecord>,
    index: DictionaryIndex,
    corpus: Corpus,
    segments: Vec<SegmentRecord>,
}

impl Lookup {
    fn load(cfg: &PipelineConfig, l: &Layout) -> Result<Self> {
        let descriptions: Vec<DescriptionRecord> = read_jsonl(&l.descriptions())?;
        Ok(Self {
            descriptions: descriptions.into_iter().map(|d| (d.variant.clone(), d)).collect(),
            index: read_json(&cfg.resolve(&cfg.paths.dictionary))?,
            corpus: read_json(&cfg.resolve(&cfg.paths.corpus))?,
            segments: read_jsonl(&l.segments())?,
        })
    }

    /// Descriptions of a variant with dominant/non-dominant replaced by the
    /// target motion's right/left.
    fn texts(&self, variant: &str, m: &MotionSequence) -> Vec<String> {
        self.descriptions[variant]
            .descriptions
            .iter()
            .map(|d| localize_handedness(d, m.handedness))
            .collect()
    }

    /// Segments labelled with a known word.
    fn worded_segments(&self) -> Vec<(&SegmentRecord, &str)> {
        self.segments
            .iter()
            .filter_map(|s| self.corpus.label_words.get(&s.label).map(|w| (s, w.as_str())))
            .collect()
    }

    /// Dictionary variants that have both a motion and descriptions.
    fn variants(&self, stitched: &Path) -> Vec<String> {
        self.descriptions
            .keys()
            .filter(|v| motion_path(stitched, v).exists())
            .cloned()
            .collect()
    }
}

fn run_stage(cfg: &PipelineConfig, l: &Layout, s: Stage) -> Result<()> {
    let p = &cfg.paths;
    let skeleton = Skeleton::bundled();
    match s {
        Stage::Stitch => {
            stitch_dir(&cfg.resolve(&p.body), &cfg.resolve(&p.hands), &l.stitched(), &cfg.stitch, &skeleton, cfg.workers)?;
        }
        Stage::Segments => {
            let segs = segments_file(&cfg.resolve(&p.labels), cfg.segments.conf, cfg.segments.m, &l.segments())?;
            slice_segments(&segs, &l.stitched(), &l.segment_motions())?;
        }
        Stage::Hms => {
            let records = read_records(&cfg.resolve(&p.phonology))?;
            let out = hms_records(&l.stitched(), &records, &cfg.hms, &skeleton, cfg.workers)?;
            write_jsonl(&l.hms(), &out)?;
        }
        Stage::Describe => {
            let records = read_records(&cfg.resolve(&p.phonology))?;
            let hms: Vec<HmsRecord> = read_jsonl(&l.hms())?;
            let client = client_from_spec(&cfg.llm_spec())?;
            let out = describe_records(&records, Some(&hms_blocks(&hms)), client.as_ref(), &cfg.describe, cfg.seed)?;
            write_jsonl(&l.descriptions(), &out)?;
        }
        Stage::TrainThmr => {
            // No assignment exists yet: each segment takes a random candidate
            // variant of its word.
            let lk = Lookup::load(cfg, l)?;
            let variants = lk.variants(&l.stitched());
            let mut items = Vec::new();
            for v in &variants {
                let m = load_motion(&l.stitched(), v)?;
                items.push((Pair { motion_id: v.clone(), texts: lk.texts(v, &m) }, m));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(item_seed(cfg.seed, "random-assignment"));
            for (seg, word) in lk.worded_segments() {
                let candidates: Vec<String> = handmotion_core::assigner::build_candidate_variants(word, &lk.index)
                    .unwrap_or_default()
                    .into_iter()
                    .filter(|c| variants.contains(c))
                    .collect();
                let Some(v) = candidates.choose(&mut rng) else { continue };
                let m = load_motion(&l.segment_motions(), &seg.segment_id)?;
                items.push((Pair { motion_id: seg.segment_id.clone(), texts: lk.texts(v, &m) }, m));
            }
            let data = Dataset::write(&l.thmr_data(), &items)?;
            let thmr_cfg = ThmrConfig { seed: cfg.seed, ..cfg.thmr.clone() };
            let (model, _) = train_thmr_on(&data, &thmr_cfg, None)?;
            model.save(&l.thmr())?;
        }
        Stage::Assign => {
            let lk = Lookup::load(cfg, l)?;
            let thmr = load_thmr(&l.thmr())?;
            let subset = thmr.cfg.subset;
            let mut samples = Vec::new();
            let mut seg_motions = BTreeMap::new();
            for (seg, word) in lk.worded_segments() {
                let m = load_motion(&l.segment_motions(), &seg.segment_id)?;
                samples.push(SampleEmbedding {
                    motion_id: seg.segment_id.clone(),
                    word: word.to_string(),
                    embedding: thmr.encode_motion(&select_subset(&m, subset))?,
                });
                seg_motions.insert(seg.segment_id.clone(), m);
            }
            let mut variants = Vec::new();
            let mut items = Vec::new();
            for v in lk.variants(&l.stitched()) {
                let m = load_motion(&l.stitched(), &v)?;
                variants.push(VariantEmbedding {
                    variant_id: v.clone(),
                    embedding: thmr.encode_motion(&select_subset(&m, subset))?,
                });
                items.push((Pair { motion_id: v.clone(), texts: lk.texts(&v, &m) }, m));
            }
            write_jsonl(&l.embeddings().join(SAMPLES_FILE), &samples)?;
            write_jsonl(&l.embeddings().join(VARIANTS_FILE), &variants)?;
            let assignments = assign_dir(&l.embeddings(), &lk.index, &l.assignments())?;
            for a in assignments {
                if let Some(v) = a.variant_id.variant() {
                    let m = seg_motions.remove(&a.motion_id).expect("assigned sample has a motion");
                    items.push((Pair { motion_id: a.motion_id.clone(), texts: lk.texts(v, &m) }, m));
                }
            }
            Dataset::write(&l.dataset(), &items)?;
        }
        Stage::TrainDiffusion => {
            let data = Dataset::load(&l.dataset())?;
            let dcfg = DiffusionConfig { seed: cfg.seed, ..cfg.diffusion.clone() };
            train_diffusion_on(&data, &l.thmr(), &dcfg, &l.diffusion())?;
        }
        Stage::Eval => {
            let generator = match cfg.eval.generator {
                PipelineGenerator::Identity => Generator::Identity,
                PipelineGenerator::Diffusion { guidance } => Generator::Diffusion {
                    ckpt: l.diffusion(),
                    guidance,
                },
            };
            let report = evaluate_experiment(&Experiment {
                mode: cfg.eval.mode,
                thmr_ckpt: l.thmr(),
                gt: l.dataset(),
                generator,
                repeats: cfg.eval.repeats,
                seed: cfg.seed,
                work_dir: l.eval(),
            })?;
            write_json(&l.report(), &report)?;
        }
    }
    Ok(())
}

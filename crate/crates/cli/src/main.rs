use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use handmotion_cli::dataset::Dataset;
use handmotion_cli::error::{Error, Result};
use handmotion_cli::eval::{evaluate, load_thmr, EvalMode};
use handmotion_cli::io::{read_json, read_jsonl, write_json, write_jsonl};
use handmotion_cli::pipeline::{run_pipeline, PipelineConfig};
use handmotion_cli::render::render_to_file;
use handmotion_cli::stages::{
    assign_dir, describe_records, generate_motion, hms_blocks, hms_records, load_generator, segments_file,
    slice_segments, stitch_dir, train_diffusion_on, train_thmr_on, DescribeSettings, HmsRecord,
};
use handmotion_core::assigner::DictionaryIndex;
use handmotion_core::hms::HmsConfig;
use handmotion_core::layout::FeatureSubset;
use handmotion_core::motion::{read_motion, write_motion};
use handmotion_core::phonology::{client_from_spec, read_records};
use handmotion_core::stitcher::StitchConfig;
use handmotion_core::Skeleton;
use handmotion_models::{DiffusionConfig, ThmrConfig};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "handmotion", version, about = "Text-driven 3D hand motion: data pipeline, training and evaluation")]
struct Cli {
    /// JSON config for the subcommand (the pipeline config for `pipeline`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-motion work.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse body and hand estimates and refine the arms.
    Stitch {
        #[arg(long)]
        body: PathBuf,
        #[arg(long)]
        hands: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract HandMotionScript codes for dictionary motions.
    Hms {
        #[arg(long)]
        motions: PathBuf,
        #[arg(long)]
        phonology: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn phonology (and HMS) into LLM descriptions.
    Describe {
        #[arg(long)]
        phonology: PathBuf,
        /// HMS JSONL, or `none`.
        #[arg(long, default_value = "none")]
        hms: String,
        /// Endpoint URL or `fixtures:DIR`.
        #[arg(long)]
        llm: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cut sign segments from frame-level label streams.
    Segments {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 6)]
        m: usize,
        #[arg(long, default_value_t = 0.5)]
        conf: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also slice `<motions>/<motion_id>.hmf` into `--slices`.
        #[arg(long, requires = "slices")]
        motions: Option<PathBuf>,
        #[arg(long)]
        slices: Option<PathBuf>,
    },
    /// Assign segments to dictionary variants.
    Assign {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        dictionary: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the text-motion retrieval model.
    TrainThmr {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        subset: Option<String>,
        /// JSON `{text: [floats]}` for precomputed text input.
        #[arg(long)]
        text_embeddings: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the diffusion denoiser.
    TrainDiffusion {
        #[arg(long)]
        data: PathBuf,
        /// THMR checkpoint or JSON embedding table.
        #[arg(long)]
        text_encoder: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample one motion for a text.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long, default_value_t = 32)]
        length: usize,
        #[arg(long, default_value_t = 15.0)]
        guidance: f64,
        #[arg(long)]
        text_encoder: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieval and FID report over generation repeats.
    Eval {
        #[arg(long, default_value = "m2m")]
        mode: String,
        #[arg(long)]
        ckpt: PathBuf,
        /// One directory per repeat.
        #[arg(long, required = true)]
        gen: Vec<PathBuf>,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Plot the skeleton at some frames to a PNG.
    Render {
        #[arg(long)]
        motion: PathBuf,
        /// Comma-separated frame indices.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        frames: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured stages.
    Pipeline,
}

fn section<T: DeserializeOwned + Default>(config: &Option<PathBuf>) -> Result<T> {
    match config {
        Some(p) => read_json(p),
        None => Ok(T::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let workers = cli.workers.unwrap_or(2);
    let skeleton = Skeleton::bundled();
    match cli.command {
        Command::Stitch { body, hands, out } => {
            let cfg: StitchConfig = section(&cli.config)?;
            stitch_dir(&body, &hands, &out, &cfg, &skeleton, workers).map_err(|e| e.in_stage("stitch"))?;
        }
        Command::Hms { motions, phonology, out } => {
            let cfg: HmsConfig = section(&cli.config)?;
            let records = read_records(&phonology)?;
            let rows = hms_records(&motions, &records, &cfg, &skeleton, workers).map_err(|e| e.in_stage("hms"))?;
            write_jsonl(&out, &rows)?;
        }
        Command::Describe { phonology, hms, llm, out } => {
            let settings: DescribeSettings = section(&cli.config)?;
            let records = read_records(&phonology)?;
            let blocks = if hms == "none" {
                None
            } else {
                let rows: Vec<HmsRecord> = read_jsonl(Path::new(&hms))?;
                Some(hms_blocks(&rows))
            };
            let client = client_from_spec(&llm)?;
            let rows = describe_records(&records, blocks.as_ref(), client.as_ref(), &settings, cli.seed.unwrap_or(0))
                .map_err(|e| e.in_stage("describe"))?;
            write_jsonl(&out, &rows)?;
        }
        Command::Segments { labels, m, conf, out, motions, slices } => {
            let segs = segments_file(&labels, conf, m, &out)?;
            if let (Some(motions), Some(slices)) = (motions, slices) {
                slice_segments(&segs, &motions, &slices).map_err(|e| e.in_stage("segments"))?;
            }
        }
        Command::Assign { embeddings, dictionary, out } => {
            let index: DictionaryIndex = read_json(&dictionary)?;
            assign_dir(&embeddings, &index, &out).map_err(|e| e.in_stage("assign"))?;
        }
        Command::TrainThmr { data, subset, text_embeddings, out } => {
            let mut cfg: ThmrConfig = section(&cli.config)?;
            if let Some(s) = subset {
                cfg.subset = FeatureSubset::parse(&s)?;
            }
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let table: Option<BTreeMap<String, Vec<f32>>> = text_embeddings.map(|p| read_json(&p)).transpose()?;
            let ds = Dataset::load(&data)?;
            let (model, log) = train_thmr_on(&ds, &cfg, table).map_err(|e| e.in_stage("train-thmr"))?;
            model.save(&out).map_err(Error::from)?;
            println!("{}", serde_json::to_string(&log)?);
        }
        Command::TrainDiffusion { data, text_encoder, out } => {
            let mut cfg: DiffusionConfig = section(&cli.config)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let ds = Dataset::load(&data)?;
            let (_, log) = train_diffusion_on(&ds, &text_encoder, &cfg, &out).map_err(|e| e.in_stage("train-diffusion"))?;
            println!("{}", serde_json::to_string(&log)?);
        }
        Command::Generate { ckpt, text, length, guidance, text_encoder, out } => {
            let (model, enc) = load_generator(&ckpt, text_encoder.as_deref())?;
            let id = handmotion_cli::io::file_stem(&out);
            let m = generate_motion(&model, &enc, &text, length, guidance, cli.seed.unwrap_or(0), &id)
                .map_err(|e| e.in_stage("generate"))?;
            write_motion(&out, &m)?;
        }
        Command::Eval { mode, ckpt, gen, gt, report } => {
            let mode: EvalMode = mode.parse()?;
            let thmr = load_thmr(&ckpt)?;
            let ds = Dataset::load(&gt)?;
            let r = evaluate(mode, &thmr, &gen, &ds, cli.seed.unwrap_or(0)).map_err(|e| e.in_stage("eval"))?;
            write_json(&report, &r)?;
            println!("{}", serde_json::to_string(&r)?);
        }
        Command::Render { motion, frames, out } => {
            let m = read_motion(&motion)?;
            render_to_file(&m, &skeleton, &frames, &out)?;
        }
        Command::Pipeline => {
            let path = cli.config.ok_or_else(|| Error::Config("pipeline needs --config".into()))?;
            let mut cfg = PipelineConfig::load(&path)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if let Some(w) = cli.workers {
                cfg.workers = w;
            }
            let outcome = run_pipeline(&cfg)?;
            println!("{}", serde_json::to_string(&outcome)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = Error::Config(e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! Pipeline orchestration for the `handmotion` command: dataset building
//! (stitch, segments, HMS, describe, assign), model training, evaluation
//! reports and skeleton plots.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod io;
pub mod pipeline;
pub mod render;
pub mod stages;

pub use error::{Error, Result};
pub use eval::{EvalReport, Experiment};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineOutcome, Stage};

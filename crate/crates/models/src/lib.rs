//! Learned models: the THMR text-motion retrieval encoders and the
//! text-conditioned diffusion denoiser, both on CPU candle.

pub mod checkpoint;
pub mod diffusion;
pub mod error;
pub mod nn;
pub mod thmr;
pub mod tokenizer;

pub use checkpoint::Checkpoint;
pub use diffusion::{Denoiser, DiffusionConfig, NoiseSchedule, ScheduleKind};
pub use error::{Error, Result};
pub use thmr::{Thmr, ThmrConfig};
pub use tokenizer::Vocabulary;

//! Core building blocks for text-driven 3D hand motion: the 274-feature
//! upper-body representation, kinematics, hand/body stitching, rule-based
//! motion codes, phonology-driven prompting, variant assignment and
//! evaluation metrics.

pub mod assigner;
pub mod error;
pub mod hms;
pub mod layout;
pub mod metrics;
pub mod motion;
pub mod phonology;
pub mod rotation;
pub mod skeleton;
pub mod stitcher;

pub use error::{Error, Result};
pub use layout::{FeatureSubset, Side};
pub use motion::{Handedness, MotionSequence};
pub use rotation::Rotation6D;
pub use skeleton::{RootTransform, Skeleton};

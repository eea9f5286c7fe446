//! Motion sequences and the `HMF1` binary container.
//!
//! Container layout (little-endian):
//!
//! ```text
//! magic        4 bytes  "HMF1"
//! version      u32      1
//! frame_count  u32      > 0
//! fps          f32
//! handedness   u8       0 = right, 1 = left
//! feature_count u32     274
//! payload      frame_count × feature_count × f32
//! ```
//!
//! The sequence id is not stored in the payload; it is the file stem.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{FeatureSubset, Side, FRAME_WIDTH, NUM_ROT_BLOCKS, ROT6D};
use crate::rotation::{project_rot6d, rot6d_to_matrix, Rotation6D};

pub const MOTION_MAGIC: &[u8; 4] = b"HMF1";
pub const MOTION_VERSION: u32 = 1;
pub const MOTION_EXTENSION: &str = "hmf";
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 1 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Handedness {
    #[default]
    Right,
    Left,
}

impl Handedness {
    pub fn dominant(self) -> Side {
        match self {
            Handedness::Right => Side::Right,
            Handedness::Left => Side::Left,
        }
    }

    fn to_byte(self) -> u8 {
        match self {
            Handedness::Right => 0,
            Handedness::Left => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Handedness::Right),
            1 => Ok(Handedness::Left),
            other => Err(Error::TruncatedPayload(format!("invalid handedness byte {other}"))),
        }
    }
}

/// A sequence of 274-wide frames stored row-major in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub id: String,
    pub fps: f64,
    pub handedness: Handedness,
    data: Vec<f64>,
}

impl MotionSequence {
    pub fn new(id: impl Into<String>, fps: f64, handedness: Handedness, data: Vec<f64>) -> Result<Self> {
        if data.is_empty() || data.len() % FRAME_WIDTH != 0 {
            return Err(Error::LayoutMismatch(format!(
                "payload of {} values is not a positive multiple of {FRAME_WIDTH}",
                data.len()
            )));
        }
        if !(fps > 0.0) {
            return Err(Error::InvalidConfig(format!("fps must be positive, got {fps}")));
        }
        Ok(Self {
            id: id.into(),
            fps,
            handedness,
            data,
        })
    }

    /// Every rotation block set to identity, face coefficients zero.
    pub fn rest(id: impl Into<String>, frames: usize, fps: f64) -> Self {
        let mut frame = vec![0.0; FRAME_WIDTH];
        for b in 0..NUM_ROT_BLOCKS {
            frame[b * ROT6D..b * ROT6D + ROT6D].copy_from_slice(&Rotation6D::IDENTITY.0);
        }
        let data = frame.repeat(frames.max(1));
        Self::new(id, fps, Handedness::Right, data).expect("rest pose is valid")
    }

    pub fn num_frames(&self) -> usize {
        self.data.len() / FRAME_WIDTH
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * FRAME_WIDTH..(t + 1) * FRAME_WIDTH]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * FRAME_WIDTH..(t + 1) * FRAME_WIDTH]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(FRAME_WIDTH)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn rotation(&self, t: usize, block: usize) -> Rotation6D {
        Rotation6D::from_slice(&self.frame(t)[block * ROT6D..])
    }

    pub fn set_rotation(&mut self, t: usize, block: usize, r: &Rotation6D) {
        self.frame_mut(t)[block * ROT6D..block * ROT6D + ROT6D].copy_from_slice(&r.0);
    }

    /// Checks that every rotation block decodes to a valid rotation.
    pub fn validate_rotations(&self) -> Result<()> {
        for t in 0..self.num_frames() {
            for b in 0..NUM_ROT_BLOCKS {
                rot6d_to_matrix(&self.rotation(t, b))?;
            }
        }
        Ok(())
    }

    /// Gram–Schmidt projection of every rotation block, in place.
    pub fn project_rotations(&mut self) {
        for frame in self.data.chunks_exact_mut(FRAME_WIDTH) {
            for b in 0..NUM_ROT_BLOCKS {
                project_rot6d(&mut frame[b * ROT6D..b * ROT6D + ROT6D]);
            }
        }
    }

    /// Frames `start..=end`, as a new sequence.
    pub fn slice(&self, id: impl Into<String>, start: usize, end: usize) -> Result<Self> {
        if start > end || end >= self.num_frames() {
            return Err(Error::LayoutMismatch(format!(
                "slice {start}..={end} out of range for {} frames",
                self.num_frames()
            )));
        }
        let data = self.data[start * FRAME_WIDTH..(end + 1) * FRAME_WIDTH].to_vec();
        Self::new(id, self.fps, self.handedness, data)
    }
}

/// A feature-reduced view of a motion (width 274, 216 or 180).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub id: String,
    pub subset: FeatureSubset,
    pub data: Vec<f64>,
}

impl FeatureSequence {
    pub fn width(&self) -> usize {
        self.subset.width()
    }

    pub fn num_frames(&self) -> usize {
        self.data.len() / self.width()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let w = self.width();
        &self.data[t * w..(t + 1) * w]
    }
}

pub fn select_subset(m: &MotionSequence, subset: FeatureSubset) -> FeatureSequence {
    let data = match subset {
        FeatureSubset::Full274 => m.data.clone(),
        _ => {
            let idx = subset.indices();
            m.frames()
                .flat_map(|f| idx.iter().map(move |&i| f[i]))
                .collect()
        }
    };
    FeatureSequence {
        id: m.id.clone(),
        subset,
        data,
    }
}

pub fn encode_motion(m: &MotionSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.data.len() * 4);
    out.extend_from_slice(MOTION_MAGIC);
    out.extend_from_slice(&MOTION_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.num_frames() as u32).to_le_bytes());
    out.extend_from_slice(&(m.fps as f32).to_le_bytes());
    out.push(m.handedness.to_byte());
    out.extend_from_slice(&(FRAME_WIDTH as u32).to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_motion(id: impl Into<String>, bytes: &[u8]) -> Result<MotionSequence> {
    if bytes.len() < 4 || &bytes[..4] != MOTION_MAGIC {
        return Err(Error::BadMagic(String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload(format!("header needs {HEADER_LEN} bytes, got {}", bytes.len())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != MOTION_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let frames = u32_at(8) as usize;
    let fps = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let handedness = Handedness::from_byte(bytes[16])?;
    let width = u32_at(17) as usize;
    if frames == 0 {
        return Err(Error::TruncatedPayload("frame count is zero".into()));
    }
    if width != FRAME_WIDTH {
        return Err(Error::LayoutMismatch(format!("feature count {width}, expected {FRAME_WIDTH}")));
    }
    let expected = HEADER_LEN + frames * width * 4;
    if bytes.len() != expected {
        return Err(Error::TruncatedPayload(format!(
            "expected {expected} bytes for {frames} frames, got {}",
            bytes.len()
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    MotionSequence::new(id, fps as f64, handedness, data)
}

pub fn write_motion(path: &Path, m: &MotionSequence) -> Result<()> {
    std::fs::write(path, encode_motion(m)).map_err(|e| Error::io(path, e))
}

pub fn read_motion(path: &Path) -> Result<MotionSequence> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_motion(id, &bytes)
}

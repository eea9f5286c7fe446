//! Canonical 274-feature frame layout.
//!
//! | indices   | content                                   |
//! |-----------|-------------------------------------------|
//! | 0..78     | 13 upper-body joints × 6D ([`BODY_JOINTS`]) |
//! | 78..168   | 15 left-hand joints × 6D ([`HAND_JOINTS`])  |
//! | 168..258  | 15 right-hand joints × 6D                 |
//! | 258..274  | 16 face coefficients (opaque)             |
//!
//! Rotation blocks are numbered 0..43 in the same order: body, left hand,
//! right hand.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ROT6D: usize = 6;
pub const NUM_BODY_JOINTS: usize = 13;
pub const NUM_HAND_JOINTS: usize = 15;
pub const NUM_FACE: usize = 16;
pub const NUM_ROT_BLOCKS: usize = NUM_BODY_JOINTS + 2 * NUM_HAND_JOINTS;
pub const FRAME_WIDTH: usize = NUM_ROT_BLOCKS * ROT6D + NUM_FACE;

pub const BODY_OFFSET: usize = 0;
pub const LEFT_HAND_OFFSET: usize = NUM_BODY_JOINTS * ROT6D;
pub const RIGHT_HAND_OFFSET: usize = LEFT_HAND_OFFSET + NUM_HAND_JOINTS * ROT6D;
pub const FACE_OFFSET: usize = RIGHT_HAND_OFFSET + NUM_HAND_JOINTS * ROT6D;

/// Upper-body joints in block order. Wrists belong to the body block.
pub const BODY_JOINTS: [&str; NUM_BODY_JOINTS] = [
    "spine1",
    "spine2",
    "spine3",
    "neck",
    "head",
    "left_collar",
    "right_collar",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
];

/// Finger joints per hand, in block order (SMPL-X ordering).
pub const HAND_JOINTS: [&str; NUM_HAND_JOINTS] = [
    "index1", "index2", "index3", "middle1", "middle2", "middle3", "pinky1", "pinky2", "pinky3",
    "ring1", "ring2", "ring3", "thumb1", "thumb2", "thumb3",
];

pub const LEFT_SHOULDER_BLOCK: usize = 7;
pub const RIGHT_SHOULDER_BLOCK: usize = 8;
pub const LEFT_ELBOW_BLOCK: usize = 9;
pub const RIGHT_ELBOW_BLOCK: usize = 10;
pub const LEFT_WRIST_BLOCK: usize = 11;
pub const RIGHT_WRIST_BLOCK: usize = 12;

/// The six rotation blocks refined by arm optimization.
pub const ARM_BLOCKS: [usize; 6] = [
    LEFT_SHOULDER_BLOCK,
    RIGHT_SHOULDER_BLOCK,
    LEFT_ELBOW_BLOCK,
    RIGHT_ELBOW_BLOCK,
    LEFT_WRIST_BLOCK,
    RIGHT_WRIST_BLOCK,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

/// Rotation block index of finger joint `j` on `side`.
pub fn hand_block(side: Side, j: usize) -> usize {
    match side {
        Side::Left => NUM_BODY_JOINTS + j,
        Side::Right => NUM_BODY_JOINTS + NUM_HAND_JOINTS + j,
    }
}

pub fn wrist_block(side: Side) -> usize {
    match side {
        Side::Left => LEFT_WRIST_BLOCK,
        Side::Right => RIGHT_WRIST_BLOCK,
    }
}

/// Offset of rotation block `b` within a frame.
pub const fn block_offset(b: usize) -> usize {
    b * ROT6D
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureSubset {
    #[serde(rename = "full_274")]
    Full274,
    #[serde(rename = "arms_hands_216")]
    ArmsHands216,
    #[serde(rename = "hands_180")]
    Hands180,
}

impl FeatureSubset {
    pub fn width(self) -> usize {
        match self {
            FeatureSubset::Full274 => FRAME_WIDTH,
            FeatureSubset::ArmsHands216 => 216,
            FeatureSubset::Hands180 => 180,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureSubset::Full274 => "full_274",
            FeatureSubset::ArmsHands216 => "arms_hands_216",
            FeatureSubset::Hands180 => "hands_180",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full_274" => Ok(FeatureSubset::Full274),
            "arms_hands_216" => Ok(FeatureSubset::ArmsHands216),
            "hands_180" => Ok(FeatureSubset::Hands180),
            other => Err(Error::InvalidConfig(format!("unknown feature subset `{other}`"))),
        }
    }

    /// Sorted feature indices into the full frame.
    pub fn indices(self) -> Vec<usize> {
        let blocks: Vec<usize> = match self {
            FeatureSubset::Full274 => return (0..FRAME_WIDTH).collect(),
            FeatureSubset::ArmsHands216 => (LEFT_SHOULDER_BLOCK..NUM_ROT_BLOCKS).collect(),
            FeatureSubset::Hands180 => (NUM_BODY_JOINTS..NUM_ROT_BLOCKS).collect(),
        };
        blocks
            .into_iter()
            .flat_map(|b| block_offset(b)..block_offset(b) + ROT6D)
            .collect()
    }
}

impl std::fmt::Display for FeatureSubset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

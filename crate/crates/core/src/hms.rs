//! HandMotionScript: per-frame categorical codes for hand distances and palm
//! orientations, their temporal post-processing, and the text block that is
//! fed to the description prompt.
//!
//! Channels are keyed by physical sides (left/right); rendering maps them to
//! dominant/non-dominant terms using the signer's handedness.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::Side;
use crate::motion::{Handedness, MotionSequence};
use crate::skeleton::{Pose, RootTransform, Skeleton};

pub const DISTANCE_LABELS: [&str; 5] = ["touching", "close", "medium", "spread", "wide"];

pub const X_LABELS: [&str; 9] = [
    "wide/right", "spread/right", "medium/right", "close/right", "touching", "close/left", "medium/left",
    "spread/left", "wide/left",
];
pub const Y_LABELS: [&str; 9] = [
    "wide/below", "spread/below", "medium/below", "close/below", "touching", "close/above", "medium/above",
    "spread/above", "wide/above",
];
pub const Z_LABELS: [&str; 9] = [
    "wide/behind", "spread/behind", "medium/behind", "close/behind", "touching", "close/in front",
    "medium/in front", "spread/in front", "wide/in front",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceCode {
    Touching,
    Close,
    Medium,
    Spread,
    Wide,
}

impl DistanceCode {
    pub const ALL: [DistanceCode; 5] = [
        DistanceCode::Touching,
        DistanceCode::Close,
        DistanceCode::Medium,
        DistanceCode::Spread,
        DistanceCode::Wide,
    ];

    pub fn label(self) -> &'static str {
        DISTANCE_LABELS[self as usize]
    }
}

/// Bucket boundaries in meters, strictly increasing. Buckets are right-open:
/// a value equal to a boundary falls into the upper bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds(pub [f64; 4]);

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds([0.02, 0.08, 0.20, 0.40])
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if self.0.windows(2).all(|w| w[0] < w[1]) && self.0.iter().all(|t| t.is_finite() && *t > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("thresholds must be positive and increasing: {:?}", self.0)))
        }
    }

    pub fn bucket(&self, magnitude: f64) -> DistanceCode {
        let n = self.0.iter().take_while(|&&t| magnitude >= t).count();
        DistanceCode::ALL[n]
    }
}

pub fn distance_code(p: &Vector3<f64>, q: &Vector3<f64>, thresholds: &Thresholds) -> DistanceCode {
    thresholds.bucket((p - q).norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    fn labels(self) -> &'static [&'static str; 9] {
        match self {
            Axis::X => &X_LABELS,
            Axis::Y => &Y_LABELS,
            Axis::Z => &Z_LABELS,
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

/// Signed per-axis code. Positive deltas point to the signer's left (x),
/// up (y) and forward (z).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AxisCode {
    pub axis: Axis,
    pub magnitude: DistanceCode,
    pub positive: bool,
}

impl AxisCode {
    pub fn label(&self) -> &'static str {
        let m = self.magnitude as usize;
        let labels = self.axis.labels();
        if m == 0 {
            labels[4]
        } else if self.positive {
            labels[4 + m]
        } else {
            labels[4 - m]
        }
    }
}

pub fn axis_code(delta: f64, axis: Axis, thresholds: &Thresholds) -> AxisCode {
    AxisCode {
        axis,
        magnitude: thresholds.bucket(delta.abs()),
        positive: delta > 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrientationCode {
    Sideways,
    Down,
    Up,
    In,
    Out,
}

impl OrientationCode {
    pub fn label(self) -> &'static str {
        match self {
            OrientationCode::Sideways => "sideways",
            OrientationCode::Down => "down",
            OrientationCode::Up => "up",
            OrientationCode::In => "in",
            OrientationCode::Out => "out",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmsConfig {
    pub thresholds: Thresholds,
    pub palm_threshold: f64,
    /// Palm normal of the right hand in its local frame; the left hand uses
    /// the x-mirrored vector.
    pub palm_normal_right: [f64; 3],
    pub min_run: usize,
}

impl Default for HmsConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            palm_threshold: 0.7,
            palm_normal_right: [0.0, -1.0, 0.0],
            min_run: 4,
        }
    }
}

impl HmsConfig {
    pub fn palm_normal(&self, side: Side) -> Vector3<f64> {
        let n = Vector3::from(self.palm_normal_right);
        match side {
            Side::Right => n,
            Side::Left => Vector3::new(-n.x, n.y, n.z),
        }
    }
}

/// Palm orientation from the global wrist rotation, or `None` when no
/// coordinate of the palm normal exceeds `threshold` in magnitude.
pub fn palm_orientation(
    wrist_global: &Matrix3<f64>,
    side: Side,
    cfg: &HmsConfig,
) -> Option<OrientationCode> {
    let n = wrist_global * cfg.palm_normal(side);
    classify_normal(&n, cfg.palm_threshold)
}

pub fn classify_normal(n: &Vector3<f64>, threshold: f64) -> Option<OrientationCode> {
    let (i, v) = n.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))?;
    if v.abs() <= threshold {
        return None;
    }
    Some(match (i, *v > 0.0) {
        (0, _) => OrientationCode::Sideways,
        (1, false) => OrientationCode::Down,
        (1, true) => OrientationCode::Up,
        (_, false) => OrientationCode::In,
        (_, true) => OrientationCode::Out,
    })
}

// ---------------------------------------------------------------------------
// Anchors and channels
// ---------------------------------------------------------------------------

/// Body-part anchor a hand distance is measured against, in hand-role terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    Head,
    Chin,
    Torso,
    Chest,
    /// The shoulder on the opposite side from the measuring hand.
    OppositeShoulder,
    /// The shoulder on the measuring hand's side.
    SameShoulder,
    /// Resolved to the other hand.
    NeutralSpace,
}

/// Maps a dictionary location token to the anchors it implies.
pub fn anchors_for_location(token: &str) -> Result<Vec<Anchor>> {
    let t = token.trim().to_ascii_lowercase().replace([' ', '-'], "_");
    Ok(match t.as_str() {
        "neutral" | "neutral_space" | "in_front" => vec![Anchor::NeutralSpace],
        "head" | "forehead" | "upper_face" | "face" | "temple" | "eyes" | "eye" | "nose" | "ear" | "cheek" | "top_of_head" => {
            vec![Anchor::Head]
        }
        "chin" | "mouth" | "lips" | "lower_face" | "neck" => vec![Anchor::Chin],
        "chest" | "torso" | "trunk" | "stomach" | "body" => vec![Anchor::Torso],
        "upper_chest" => vec![Anchor::Chest],
        "shoulder" | "shoulders" => vec![Anchor::OppositeShoulder, Anchor::SameShoulder],
        _ => return Err(Error::UnknownAnchor(token.to_string())),
    })
}

/// What a hand distance is measured against, in physical terms.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Target {
    Marker(String),
    Shoulder(Side),
    Hand(Side),
}

impl Target {
    fn key(&self) -> String {
        match self {
            Target::Marker(m) => m.clone(),
            Target::Shoulder(s) => format!("{}_shoulder", s.as_str()),
            Target::Hand(s) => format!("{}_hand", s.as_str()),
        }
    }

    fn render(&self, handedness: Handedness) -> String {
        match self {
            Target::Marker(m) => m.clone(),
            Target::Shoulder(s) => format!("{} shoulder", role(*s, handedness)),
            Target::Hand(s) => format!("{} hand", role(*s, handedness)),
        }
    }
}

fn role(side: Side, handedness: Handedness) -> &'static str {
    if side == handedness.dominant() {
        "dominant"
    } else {
        "non-dominant"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelKind {
    Distance,
    Axis(Axis),
    Orientation,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChannelKey {
    pub kind: ChannelKind,
    pub hand: Side,
    /// `None` for orientation channels.
    pub target: Option<Target>,
}

impl ChannelKey {
    /// Stable machine-readable name, e.g. `right_hand->torso:x`.
    pub fn name(&self) -> String {
        let hand = format!("{}_hand", self.hand.as_str());
        match (&self.kind, &self.target) {
            (ChannelKind::Orientation, _) => format!("{hand}:palm"),
            (ChannelKind::Distance, Some(t)) => format!("{hand}->{}:distance", t.key()),
            (ChannelKind::Axis(a), Some(t)) => format!("{hand}->{}:{}", t.key(), a.name()),
            (_, None) => format!("{hand}:?"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub key: ChannelKey,
    /// One entry per frame; `None` where no code applies.
    pub raw: Vec<Option<&'static str>>,
    /// Post-processed sequence; `None` until post-processing, or when the
    /// channel was removed by it.
    pub processed: Option<Vec<&'static str>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosecodeTable {
    pub frames: usize,
    pub channels: Vec<Channel>,
}

impl PosecodeTable {
    pub fn channel(&self, name: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.key.name() == name)
    }

    /// Post-processed channels as `name -> codes`.
    pub fn processed_map(&self) -> BTreeMap<String, Vec<String>> {
        self.channels
            .iter()
            .filter_map(|c| {
                c.processed
                    .as_ref()
                    .map(|p| (c.key.name(), p.iter().map(|s| s.to_string()).collect()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UsedHands {
    Dominant,
    Nondominant,
    Both,
}

impl UsedHands {
    fn sides(self, handedness: Handedness) -> Vec<Side> {
        let d = handedness.dominant();
        match self {
            UsedHands::Dominant => vec![d],
            UsedHands::Nondominant => vec![d.other()],
            UsedHands::Both => vec![d, d.other()],
        }
    }
}

fn resolve_target(anchor: Anchor, hand: Side, handedness: Handedness, used: UsedHands) -> Option<Target> {
    let d = handedness.dominant();
    match anchor {
        Anchor::Head => Some(Target::Marker("head".into())),
        Anchor::Chin => Some(Target::Marker("chin".into())),
        Anchor::Torso => Some(Target::Marker("torso".into())),
        Anchor::Chest => Some(Target::Marker("chest".into())),
        Anchor::OppositeShoulder => Some(Target::Shoulder(hand.other())),
        Anchor::SameShoulder => Some(Target::Shoulder(hand)),
        // The hand-to-hand distance exists only when both hands are tracked,
        // and is measured once, from the dominant hand.
        Anchor::NeutralSpace => (used == UsedHands::Both && hand == d).then(|| Target::Hand(d.other())),
    }
}

fn target_position(skeleton: &Skeleton, pose: &Pose, target: &Target) -> Result<Vector3<f64>> {
    let name = match target {
        Target::Marker(m) => m.clone(),
        Target::Shoulder(s) => format!("{}_shoulder", s.as_str()),
        Target::Hand(s) => format!("{}_hand", s.as_str()),
    };
    skeleton.marker_position(pose, &name)
}

/// Raw per-frame codes for every (used hand, anchor) pair and each used
/// hand's palm orientation.
pub fn extract_framecodes(
    motion: &MotionSequence,
    skeleton: &Skeleton,
    anchors: &[Anchor],
    used: UsedHands,
    cfg: &HmsConfig,
) -> Result<PosecodeTable> {
    cfg.thresholds.validate()?;
    let handedness = motion.handedness;
    let mut keys: Vec<ChannelKey> = Vec::new();
    let sides = used.sides(handedness);
    for &hand in &sides {
        for &anchor in anchors {
            let Some(target) = resolve_target(anchor, hand, handedness, used) else { continue };
            let kinds = [
                ChannelKind::Distance,
                ChannelKind::Axis(Axis::X),
                ChannelKind::Axis(Axis::Y),
                ChannelKind::Axis(Axis::Z),
            ];
            for kind in kinds {
                let key = ChannelKey {
                    kind,
                    hand,
                    target: Some(target.clone()),
                };
                if !keys.contains(&key) {
                    keys.push(key);
                }
            }
        }
    }
    for &hand in &sides {
        keys.push(ChannelKey {
            kind: ChannelKind::Orientation,
            hand,
            target: None,
        });
    }
    for key in &keys {
        if let Some(t) = &key.target {
            let name = match t {
                Target::Marker(m) => m.clone(),
                other => other.key(),
            };
            if !skeleton.markers.contains_key(&name) {
                return Err(Error::UnknownAnchor(name));
            }
        }
    }
    for side in &sides {
        let name = format!("{}_hand", side.as_str());
        if !skeleton.markers.contains_key(&name) {
            return Err(Error::UnknownAnchor(name));
        }
    }

    let n = motion.num_frames();
    let mut raw: Vec<Vec<Option<&'static str>>> = vec![Vec::with_capacity(n); keys.len()];
    for t in 0..n {
        let pose = skeleton.pose(motion.frame(t), &RootTransform::default())?;
        for (key, out) in keys.iter().zip(raw.iter_mut()) {
            let hand_pos = skeleton.marker_position(&pose, &format!("{}_hand", key.hand.as_str()))?;
            let code = match (&key.kind, &key.target) {
                (ChannelKind::Orientation, _) => {
                    let g = pose.globals[skeleton.wrist_joint(key.hand)];
                    palm_orientation(&g, key.hand, cfg).map(OrientationCode::label)
                }
                (ChannelKind::Distance, Some(target)) => {
                    let q = target_position(skeleton, &pose, target)?;
                    Some(distance_code(&hand_pos, &q, &cfg.thresholds).label())
                }
                (ChannelKind::Axis(axis), Some(target)) => {
                    let q = target_position(skeleton, &pose, target)?;
                    let delta = hand_pos[axis.index()] - q[axis.index()];
                    Some(axis_code(delta, *axis, &cfg.thresholds).label())
                }
                (_, None) => None,
            };
            out.push(code);
        }
    }
    Ok(PosecodeTable {
        frames: n,
        channels: keys
            .into_iter()
            .zip(raw)
            .map(|(key, raw)| Channel {
                key,
                raw,
                processed: None,
            })
            .collect(),
    })
}

/// Drops runs shorter than `min_run` (and frames without a code), then
/// collapses repeats.
pub fn filter_and_collapse(raw: &[Option<&'static str>], min_run: usize) -> Vec<&'static str> {
    let mut out: Vec<&'static str> = Vec::new();
    let mut i = 0;
    while i < raw.len() {
        let mut j = i;
        while j < raw.len() && raw[j] == raw[i] {
            j += 1;
        }
        if let Some(code) = raw[i] {
            if j - i >= min_run && out.last() != Some(&code) {
                out.push(code);
            }
        }
        i = j;
    }
    out
}

/// Recomputes every post-processed sequence from the raw codes.
///
/// Axis channels of one (hand, target) feature are dropped together when at
/// least two of them still hold more than one distinct code.
pub fn postprocess(table: &PosecodeTable, min_run: usize) -> PosecodeTable {
    let mut out = table.clone();
    for c in &mut out.channels {
        let seq = filter_and_collapse(&c.raw, min_run);
        c.processed = (!seq.is_empty()).then_some(seq);
    }
    let mut multi: BTreeMap<(Side, Target), usize> = BTreeMap::new();
    for c in &out.channels {
        if let (ChannelKind::Axis(_), Some(t), Some(p)) = (&c.key.kind, &c.key.target, &c.processed) {
            let mut distinct = p.clone();
            distinct.sort_unstable();
            distinct.dedup();
            if distinct.len() > 1 {
                *multi.entry((c.key.hand, t.clone())).or_default() += 1;
            }
        }
    }
    for c in &mut out.channels {
        if let (ChannelKind::Axis(_), Some(t)) = (&c.key.kind, &c.key.target) {
            if multi.get(&(c.key.hand, t.clone())).copied().unwrap_or(0) >= 2 {
                c.processed = None;
            }
        }
    }
    out
}

fn render_code(kind: ChannelKind, code: &str) -> String {
    match kind {
        ChannelKind::Axis(_) if code == "touching" => "aligned".to_string(),
        ChannelKind::Axis(_) => code.replacen('/', " / ", 1),
        _ => code.to_string(),
    }
}

/// Renders post-processed channels in the prompt grammar. Sections appear
/// in the order dominant-hand distances, non-dominant-hand distances,
/// distance between hands, hand orientations; empty sections are omitted.
pub fn render_hms_block(table: &PosecodeTable, handedness: Handedness) -> String {
    let dominant = handedness.dominant();
    let mut sections: [(&str, Vec<String>); 4] = [
        ("DOMINANT HAND DISTANCES:", Vec::new()),
        ("NON-DOMINANT HAND DISTANCES:", Vec::new()),
        ("DISTANCE BETWEEN HANDS:", Vec::new()),
        ("HAND ORIENTATIONS:", Vec::new()),
    ];
    for c in &table.channels {
        let Some(seq) = &c.processed else { continue };
        let codes: Vec<String> = seq.iter().map(|s| render_code(c.key.kind, s)).collect();
        let list = format!("[{}]", codes.join(", "));
        let hand = format!("{} hand", role(c.key.hand, handedness));
        let (section, line) = match (&c.key.kind, &c.key.target) {
            (ChannelKind::Orientation, _) => (3, format!("- Palm orientation - {hand}: {list}")),
            (kind, Some(target)) => {
                let section = match target {
                    Target::Hand(_) => 2,
                    _ if c.key.hand == dominant => 0,
                    _ => 1,
                };
                let to = target.render(handedness);
                let line = match kind {
                    ChannelKind::Axis(a) => format!("- Distance along {} axis from {hand} to {to}: {list}", a.name()),
                    _ => format!("- Distance from {hand} to {to}: {list}"),
                };
                (section, line)
            }
            _ => continue,
        };
        sections[section].1.push(line);
    }
    let mut out = String::new();
    for (header, lines) in sections {
        if lines.is_empty() {
            continue;
        }
        writeln!(out, "{header}").unwrap();
        for l in lines {
            writeln!(out, "{l}").unwrap();
        }
    }
    out
}

/// Extract, post-process and render in one call.
pub fn describe_motion(
    motion: &MotionSequence,
    skeleton: &Skeleton,
    anchors: &[Anchor],
    used: UsedHands,
    cfg: &HmsConfig,
) -> Result<(PosecodeTable, String)> {
    let raw = extract_framecodes(motion, skeleton, anchors, used, cfg)?;
    let table = postprocess(&raw, cfg.min_run);
    let block = render_hms_block(&table, motion.handedness);
    Ok((table, block))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::axis_angle;
    use rand::{Rng, SeedableRng};

    fn th() -> Thresholds {
        Thresholds::default()
    }

    #[test]
    fn distance_buckets() {
        let p = Vector3::new(0.1, 0.2, 0.3);
        assert_eq!(distance_code(&p, &p, &th()), DistanceCode::Touching);
        let q = p + Vector3::new(0.08, 0.0, 0.0);
        // boundary falls upward
        assert_eq!(th().bucket(0.08), DistanceCode::Medium);
        assert_eq!(th().bucket(0.0799999), DistanceCode::Close);
        assert_eq!(th().bucket(1.0), DistanceCode::Wide);
        assert!(matches!(distance_code(&p, &q, &th()), DistanceCode::Close | DistanceCode::Medium));
    }

    #[test]
    fn distance_matches_bucketing_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let t = th().0;
        for _ in 0..1000 {
            let p: Vector3<f64> = Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let q: Vector3<f64> = Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let d = ((p.x - q.x).powi(2) + (p.y - q.y).powi(2) + (p.z - q.z).powi(2)).sqrt();
            let expected = if d < t[0] {
                "touching"
            } else if d < t[1] {
                "close"
            } else if d < t[2] {
                "medium"
            } else if d < t[3] {
                "spread"
            } else {
                "wide"
            };
            assert_eq!(distance_code(&p, &q, &th()).label(), expected);
        }
    }

    #[test]
    fn axis_labels() {
        assert_eq!(axis_code(0.0, Axis::X, &th()).label(), "touching");
        assert_eq!(axis_code(0.41, Axis::Y, &th()).label(), "wide/above");
        assert_eq!(axis_code(-0.1, Axis::X, &th()).label(), "medium/right");
        assert_eq!(axis_code(0.05, Axis::Z, &th()).label(), "close/in front");
        assert_eq!(axis_code(-0.3, Axis::Z, &th()).label(), "spread/behind");
    }

    #[test]
    fn axis_matches_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let d: f64 = rng.gen_range(-0.6..0.6);
            let m = d.abs();
            let level = [0.02, 0.08, 0.20, 0.40].iter().filter(|&&t| m >= t).count();
            let names = ["touching", "close", "medium", "spread", "wide"];
            let expected = if level == 0 {
                "touching".to_string()
            } else {
                format!("{}/{}", names[level], if d > 0.0 { "above" } else { "below" })
            };
            assert_eq!(axis_code(d, Axis::Y, &th()).label(), expected);
        }
    }

    #[test]
    fn palm_rules() {
        let cfg = HmsConfig::default();
        assert_eq!(classify_normal(&Vector3::new(0.0, -1.0, 0.0), 0.7), Some(OrientationCode::Down));
        assert_eq!(classify_normal(&Vector3::new(0.6, 0.6, 0.52), 0.7), None);
        assert_eq!(classify_normal(&Vector3::new(-0.9, 0.1, 0.0), 0.7), Some(OrientationCode::Sideways));
        assert_eq!(classify_normal(&Vector3::new(0.0, 0.1, 0.95), 0.7), Some(OrientationCode::Out));
        assert_eq!(classify_normal(&Vector3::new(0.0, 0.1, -0.95), 0.7), Some(OrientationCode::In));
        // rest pose palms face down
        assert_eq!(palm_orientation(&Matrix3::identity(), Side::Right, &cfg), Some(OrientationCode::Down));
        // rolling the forearm by 180° turns the palm up
        let roll = axis_angle(Vector3::x(), std::f64::consts::PI);
        assert_eq!(palm_orientation(&roll, Side::Left, &cfg), Some(OrientationCode::Up));
    }

    #[test]
    fn postprocess_rules() {
        let raw: Vec<Option<&'static str>> = [vec![Some("close"); 3], vec![Some("medium"); 6]].concat();
        assert_eq!(filter_and_collapse(&raw, 4), vec!["medium"]);
        let raw: Vec<Option<&'static str>> = [vec![Some("spread"); 10], vec![Some("close"); 10]].concat();
        assert_eq!(filter_and_collapse(&raw, 4), vec!["spread", "close"]);
        // a short interruption does not split a run in the output
        let raw: Vec<Option<&'static str>> =
            [vec![Some("wide"); 5], vec![Some("close"); 2], vec![Some("wide"); 5]].concat();
        assert_eq!(filter_and_collapse(&raw, 4), vec!["wide"]);
        assert!(filter_and_collapse(&[None, None, None, None], 4).is_empty());
    }

    fn channel(kind: ChannelKind, raw: Vec<Option<&'static str>>) -> Channel {
        Channel {
            key: ChannelKey {
                kind,
                hand: Side::Right,
                target: if kind == ChannelKind::Orientation { None } else { Some(Target::Hand(Side::Left)) },
            },
            raw,
            processed: None,
        }
    }

    fn seq(parts: &[(&'static str, usize)]) -> Vec<Option<&'static str>> {
        parts.iter().flat_map(|&(c, n)| std::iter::repeat(Some(c)).take(n)).collect()
    }

    #[test]
    fn axis_drop_rule() {
        let table = PosecodeTable {
            frames: 12,
            channels: vec![
                channel(ChannelKind::Distance, seq(&[("spread", 6), ("close", 6)])),
                channel(ChannelKind::Axis(Axis::X), seq(&[("close/left", 6), ("touching", 6)])),
                channel(ChannelKind::Axis(Axis::Y), seq(&[("touching", 12)])),
                channel(ChannelKind::Axis(Axis::Z), seq(&[("close/in front", 6), ("medium/in front", 6)])),
            ],
        };
        let out = postprocess(&table, 4);
        assert_eq!(out.channels[0].processed.as_deref(), Some(&["spread", "close"][..]));
        for c in &out.channels[1..] {
            assert!(c.processed.is_none(), "{}", c.key.name());
        }
        // a single multi-code axis keeps all three
        let mut keep = table.clone();
        keep.channels[3].raw = seq(&[("close/in front", 12)]);
        let out = postprocess(&keep, 4);
        assert!(out.channels[1..].iter().all(|c| c.processed.is_some()));
    }

    #[test]
    fn postprocess_is_idempotent_and_collapsed() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let codes = ["touching", "close", "medium"];
        for _ in 0..50 {
            let mut raw = Vec::new();
            while raw.len() < 40 {
                let c = codes[rng.gen_range(0..3)];
                let n = rng.gen_range(1..8);
                raw.extend(std::iter::repeat(Some(c)).take(n));
            }
            let table = PosecodeTable { frames: raw.len(), channels: vec![channel(ChannelKind::Distance, raw)] };
            let once = postprocess(&table, 4);
            assert_eq!(postprocess(&once, 4), once);
            if let Some(p) = &once.channels[0].processed {
                assert!(p.windows(2).all(|w| w[0] != w[1]));
            }
        }
    }

    #[test]
    fn render_single_channel() {
        let table = PosecodeTable {
            frames: 20,
            channels: vec![channel(ChannelKind::Distance, seq(&[("spread", 10), ("close", 10)]))],
        };
        let block = render_hms_block(&postprocess(&table, 4), Handedness::Right);
        assert_eq!(
            block,
            "DISTANCE BETWEEN HANDS:\n- Distance from dominant hand to non-dominant hand: [spread, close]\n"
        );
        let empty = PosecodeTable { frames: 0, channels: vec![] };
        assert_eq!(render_hms_block(&empty, Handedness::Right), "");
    }

    #[test]
    fn location_tokens() {
        assert_eq!(anchors_for_location("Neutral space").unwrap(), vec![Anchor::NeutralSpace]);
        assert_eq!(anchors_for_location("chest").unwrap(), vec![Anchor::Torso]);
        assert_eq!(anchors_for_location("shoulder").unwrap().len(), 2);
        assert!(matches!(anchors_for_location("knee"), Err(Error::UnknownAnchor(_))));
    }

    #[test]
    fn static_motion_gives_constant_channels() {
        let s = Skeleton::bundled();
        let m = MotionSequence::rest("r", 8, 25.0);
        let table = extract_framecodes(&m, &s, &[Anchor::NeutralSpace, Anchor::Torso], UsedHands::Both, &HmsConfig::default()).unwrap();
        for c in &table.channels {
            assert_eq!(c.raw.len(), 8);
            assert!(c.raw.windows(2).all(|w| w[0] == w[1]), "{}", c.key.name());
        }
        // dominant→other hand, dominant→torso, non-dominant→torso (4 each) + 2 palms
        assert_eq!(table.channels.len(), 14);
    }

    #[test]
    fn one_handed_has_no_nondominant_channels() {
        let s = Skeleton::bundled();
        let m = MotionSequence::rest("r", 4, 25.0);
        let table = extract_framecodes(&m, &s, &[Anchor::NeutralSpace, Anchor::Head], UsedHands::Dominant, &HmsConfig::default()).unwrap();
        for c in &table.channels {
            assert_eq!(c.key.hand, Side::Right);
            assert!(!matches!(c.key.target, Some(Target::Hand(_))));
        }
        let block = render_hms_block(&postprocess(&table, 4), Handedness::Right);
        assert!(!block.contains("non-dominant"));
    }
}

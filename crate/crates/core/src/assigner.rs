//! Sign segments from frame-level label streams, and dictionary variant
//! assignment by k-medoids clustering in embedding space.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameLabel {
    pub label: u32,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub label: u32,
    pub start: usize,
    /// Inclusive.
    pub end: usize,
}

impl Segment {
    pub fn frames(&self) -> usize {
        self.end - self.start + 1
    }
}

pub const DEFAULT_MIN_RUN: usize = 6;
pub const DEFAULT_CONF_THRESHOLD: f64 = 0.5;

/// Drops frames below `conf_threshold`, forms maximal same-label runs,
/// merges same-label runs separated by fewer than `merge_gap` frames, then
/// keeps runs of at least `m` frames. Output is sorted by start frame.
pub fn extract_segments(stream: &[FrameLabel], conf_threshold: f64, m: usize, merge_gap: usize) -> Vec<Segment> {
    let mut runs: Vec<Segment> = Vec::new();
    for (t, f) in stream.iter().enumerate() {
        if f.confidence < conf_threshold {
            continue;
        }
        match runs.last_mut() {
            Some(r) if r.label == f.label && r.end + 1 == t => r.end = t,
            _ => runs.push(Segment {
                label: f.label,
                start: t,
                end: t,
            }),
        }
    }
    // Merge per label. A run of another label in between is not a barrier.
    let mut by_label: BTreeMap<u32, Vec<Segment>> = BTreeMap::new();
    for r in runs {
        let list = by_label.entry(r.label).or_default();
        match list.last_mut() {
            Some(prev) if r.start - prev.end - 1 < merge_gap => prev.end = r.end,
            _ => list.push(r),
        }
    }
    let mut out: Vec<Segment> = by_label.into_values().flatten().filter(|s| s.frames() >= m.max(1)).collect();
    out.sort_by_key(|s| (s.start, s.label));
    out
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// `1 − cos(a, b)` for every pair, clamped to `[0, 2]`.
pub fn cosine_distance_matrix(points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let norms: Vec<f64> = points.iter().map(|p| p.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    if let Some(i) = norms.iter().position(|&n| !(n > 0.0) || !n.is_finite()) {
        return Err(Error::ZeroVector(i));
    }
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let dot: f64 = points[i].iter().zip(&points[j]).map(|(x, y)| x * y).sum();
            let v = (1.0 - dot / (norms[i] * norms[j])).clamp(0.0, 2.0);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    Ok(d)
}

pub const KMEDOIDS_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMedoids {
    pub medoids: Vec<usize>,
    pub labels: Vec<usize>,
    /// Total cost after each assignment step, starting with the initial one.
    pub costs: Vec<f64>,
}

fn assign(d: &[Vec<f64>], medoids: &[usize]) -> (Vec<usize>, f64) {
    let mut cost = 0.0;
    let labels = (0..d.len())
        .map(|i| {
            let mut best = 0;
            for (c, &m) in medoids.iter().enumerate() {
                if d[i][m] < d[i][medoids[best]] {
                    best = c;
                }
            }
            cost += d[i][medoids[best]];
            best
        })
        .collect();
    (labels, cost)
}

/// PAM-style alternation on a precomputed distance matrix. Nearest-medoid
/// ties go to the lowest cluster index; medoid-update ties keep the current
/// medoid, then the lowest point index.
pub fn k_medoids(d: &[Vec<f64>], init_medoids: &[usize]) -> Result<KMedoids> {
    let n = d.len();
    let k = init_medoids.len();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("k = {k} with {n} points")));
    }
    let distinct: BTreeSet<usize> = init_medoids.iter().copied().collect();
    if distinct.len() != k || init_medoids.iter().any(|&m| m >= n) {
        return Err(Error::InvalidConfig("initial medoids must be distinct valid indices".into()));
    }
    let mut medoids = init_medoids.to_vec();
    let (mut labels, cost) = assign(d, &medoids);
    let mut costs = vec![cost];
    for _ in 0..KMEDOIDS_MAX_ITER {
        let mut changed = false;
        for c in 0..k {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            let within = |cand: usize| members.iter().map(|&i| d[i][cand]).sum::<f64>();
            let mut best = medoids[c];
            let mut best_cost = within(best);
            for &cand in &members {
                let v = within(cand);
                if v < best_cost {
                    best = cand;
                    best_cost = v;
                }
            }
            if best != medoids[c] {
                medoids[c] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let (new_labels, cost) = assign(d, &medoids);
        costs.push(cost);
        if new_labels == labels {
            break;
        }
        labels = new_labels;
    }
    Ok(KMedoids { medoids, labels, costs })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Assignment {
    Variant(String),
    Filtered(Filtered),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Filtered {
    #[serde(rename = "FILTERED")]
    Filtered,
}

impl Assignment {
    pub fn variant(&self) -> Option<&str> {
        match self {
            Assignment::Variant(v) => Some(v),
            Assignment::Filtered(_) => None,
        }
    }
}

pub type VariantAssignment = BTreeMap<String, Assignment>;

/// Clusters samples together with the variant points (k = #variants,
/// medoids initialized at the variants) and assigns each cluster's samples:
/// one variant inside → that variant; none → filtered; several → the variant
/// with the highest cosine similarity to each sample.
pub fn assign_variants(
    samples: &BTreeMap<String, Vec<f64>>,
    variants: &BTreeMap<String, Vec<f64>>,
) -> Result<VariantAssignment> {
    if variants.is_empty() {
        return Err(Error::InvalidConfig("at least one variant is required".into()));
    }
    let variant_ids: Vec<&String> = variants.keys().collect();
    let sample_ids: Vec<&String> = samples.keys().collect();
    // Variants first, so their indices equal their cluster indices.
    let points: Vec<Vec<f64>> = variants.values().chain(samples.values()).cloned().collect();
    let d = cosine_distance_matrix(&points)?;
    let k = variant_ids.len();
    let init: Vec<usize> = (0..k).collect();
    let km = k_medoids(&d, &init)?;

    let mut in_cluster: Vec<Vec<usize>> = vec![Vec::new(); k];
    for v in 0..k {
        in_cluster[km.labels[v]].push(v);
    }
    let mut out = VariantAssignment::new();
    for (s, id) in sample_ids.iter().enumerate() {
        let c = km.labels[k + s];
        let a = match in_cluster[c].as_slice() {
            [] => Assignment::Filtered(Filtered::Filtered),
            [v] => Assignment::Variant(variant_ids[*v].clone()),
            many => {
                let sample = &points[k + s];
                let mut best = many[0];
                for &v in &many[1..] {
                    if cosine(sample, &points[v]) > cosine(sample, &points[best]) {
                        best = v;
                    }
                }
                Assignment::Variant(variant_ids[best].clone())
            }
        };
        out.insert((*id).clone(), a);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DictionaryIndex {
    /// gloss -> words/keywords it maps to.
    pub glosses: BTreeMap<String, Vec<String>>,
}

fn norm_word(w: &str) -> String {
    w.trim().to_lowercase()
}

impl DictionaryIndex {
    /// Glosses whose keyword list contains `word`.
    pub fn glosses_for(&self, word: &str) -> BTreeSet<String> {
        let w = norm_word(word);
        self.glosses
            .iter()
            .filter(|(_, kws)| kws.iter().any(|k| norm_word(k) == w))
            .map(|(g, _)| g.clone())
            .collect()
    }
}

/// Glosses mapping to `word`, plus glosses mapping to any keyword of those
/// glosses (one hop). Sorted and deduplicated.
pub fn build_candidate_variants(word: &str, index: &DictionaryIndex) -> Result<Vec<String>> {
    let direct = index.glosses_for(word);
    if direct.is_empty() {
        return Err(Error::UnknownWord(word.to_string()));
    }
    let mut out = direct.clone();
    for g in &direct {
        for kw in &index.glosses[g] {
            out.extend(index.glosses_for(kw));
        }
    }
    Ok(out.into_iter().collect())
}

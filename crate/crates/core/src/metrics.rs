//! Retrieval and distribution metrics over embedding vectors.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    /// Gallery indices per query, most similar first.
    pub ranks: Vec<Vec<usize>>,
    /// k -> percentage of queries with a correct item in the top k.
    pub recall: BTreeMap<usize, f64>,
}

impl RetrievalResult {
    pub fn recall_at(&self, k: usize) -> f64 {
        self.recall.get(&k).copied().unwrap_or(f64::NAN)
    }
}

/// Ranks the gallery by descending cosine similarity for each query. Ties
/// keep gallery order.
pub fn retrieval<F>(queries: &[Vec<f64>], gallery: &[Vec<f64>], correct: F, ks: &[usize]) -> Result<RetrievalResult>
where
    F: Fn(usize, usize) -> bool,
{
    for (i, v) in queries.iter().chain(gallery).enumerate() {
        if !(v.iter().map(|x| x * x).sum::<f64>() > 0.0) {
            return Err(Error::ZeroVector(i));
        }
    }
    let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    let mut ranks = Vec::with_capacity(queries.len());
    for (q, qv) in queries.iter().enumerate() {
        let sims: Vec<f64> = gallery.iter().map(|g| cosine_similarity(qv, g)).collect();
        let mut order: Vec<usize> = (0..gallery.len()).collect();
        order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]));
        for (&k, h) in hits.iter_mut() {
            if order.iter().take(k).any(|&g| correct(q, g)) {
                *h += 1;
            }
        }
        ranks.push(order);
    }
    let n = queries.len().max(1) as f64;
    let recall = hits.into_iter().map(|(k, h)| (k, 100.0 * h as f64 / n)).collect();
    Ok(RetrievalResult { ranks, recall })
}

pub const TEXT_SIMILARITY_THRESHOLD: f64 = 0.95;

/// Relaxed correctness: the two texts' embeddings have cosine strictly above
/// `threshold`.
pub fn text_similarity_correct(a: &[f64], b: &[f64], threshold: f64) -> bool {
    cosine_similarity(a, b) > threshold
}

/// Eigenvalues within `FID_EIG_TOL * max(1, largest |eigenvalue|)` of zero
/// are clamped to zero; anything more negative is an error.
pub const FID_EIG_TOL: f64 = 1e-8;

fn mean_cov(set: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = set.len();
    let d = set[0].len();
    let x = DMatrix::from_fn(n, d, |i, j| set[i][j]);
    let mu = DVector::from_fn(d, |j, _| x.column(j).mean());
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    (mu, cov)
}

fn clamped_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for v in eig.eigenvalues.iter_mut() {
        if *v < -FID_EIG_TOL * scale {
            return Err(Error::CovarianceSingularBeyondTolerance(*v));
        }
        if *v <= FID_EIG_TOL * scale {
            *v = 0.0;
        }
    }
    Ok(eig)
}

fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let e = clamped_eigen(m)?;
    Ok(&e.eigenvectors * DMatrix::from_diagonal(&e.eigenvalues.map(f64::sqrt)) * e.eigenvectors.transpose())
}

/// Fréchet distance between Gaussians fitted to two embedding sets.
pub fn fid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientSamples(format!("fid needs ≥2 samples per set, got {} and {}", a.len(), b.len())));
    }
    if a[0].len() != b[0].len() {
        return Err(Error::LayoutMismatch(format!("embedding widths {} and {}", a[0].len(), b[0].len())));
    }
    let (mu_a, cov_a) = mean_cov(a);
    let (mu_b, cov_b) = mean_cov(b);
    // Tr((Σa Σb)^½) = Tr((Σa^½ Σb Σa^½)^½) is the sum of singular values of
    // Σa^½ Σb^½. Taking them directly avoids squaring small eigenvalues.
    let tr_sqrt: f64 = (sym_sqrt(&cov_a)? * sym_sqrt(&cov_b)?).singular_values().sum();
    let diff = (mu_a - mu_b).norm_squared();
    Ok(diff + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt)
}

/// Mean Euclidean distance over `n_pairs` disjoint random pairs.
pub fn diversity(embeddings: &[Vec<f64>], n_pairs: usize, seed: u64) -> Result<f64> {
    if n_pairs == 0 || 2 * n_pairs > embeddings.len() {
        return Err(Error::InsufficientSamples(format!(
            "{n_pairs} disjoint pairs need {} samples, got {}",
            2 * n_pairs,
            embeddings.len()
        )));
    }
    let mut idx: Vec<usize> = (0..embeddings.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let total: f64 = idx[..2 * n_pairs]
        .chunks(2)
        .map(|p| euclidean(&embeddings[p[0]], &embeddings[p[1]]))
        .sum();
    Ok(total / n_pairs as f64)
}

/// Mean pairwise Euclidean distance among generations of the same text,
/// averaged over texts.
pub fn multimodality(groups: &[Vec<Vec<f64>>]) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::InsufficientSamples("no text groups".into()));
    }
    let mut sum = 0.0;
    for (g, group) in groups.iter().enumerate() {
        if group.len() < 2 {
            return Err(Error::InsufficientSamples(format!("group {g} has {} generations", group.len())));
        }
        let mut s = 0.0;
        let mut n = 0usize;
        for i in 0..group.len() {
            for j in i + 1..group.len() {
                s += euclidean(&group[i], &group[j]);
                n += 1;
            }
        }
        sum += s / n as f64;
    }
    Ok(sum / groups.len() as f64)
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

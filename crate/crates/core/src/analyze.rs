//! Mahalanobis-distance diagnostic over segment vectors.
//!
//! The covariance is shrunk toward a scaled identity,
//! `Σ = (1 − λ)·S + λ·(tr(S)/d)·I`, so it stays positive definite when the
//! segment dimension exceeds the segment count. When `d > n` the matrix is
//! never formed: `Σ = b·I + UᵀU` with `U` the scaled centered samples, and
//! quadratic forms go through the `n`×`n` system `b·I + U Uᵀ`.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::linalg::{gram, Cholesky};
use crate::segment::SegmentGrid;

pub const DEFAULT_SHRINKAGE: f64 = 0.1;
/// Explained-variance fraction for the optional principal-component reduction.
pub const DEFAULT_PCA_VARIANCE: f64 = 0.95;

/// How the covariance is stored and factored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceForm {
    /// Dense when `d <= n`, low-rank plus diagonal otherwise.
    #[default]
    Auto,
    Dense,
    LowRank,
}

#[derive(Debug, Clone)]
enum Covariance {
    Dense {
        matrix: Vec<f64>,
        chol: Cholesky,
    },
    LowRank {
        /// `n`×`d` rows of `sqrt((1 − λ)/(n − 1))·(x_i − μ)`.
        factors: Vec<f64>,
        rows: usize,
        diag: f64,
        chol: Cholesky,
    },
}

#[derive(Debug, Clone)]
struct Projection {
    center: Vec<f64>,
    /// `r`×`d` orthonormal principal directions.
    basis: Vec<f64>,
    rank: usize,
}

impl Projection {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.center.len();
        (0..self.rank)
            .map(|k| {
                self.basis[k * d..(k + 1) * d]
                    .iter()
                    .zip(x.iter().zip(&self.center))
                    .map(|(b, (v, c))| b * (v - c))
                    .sum()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SegmentDistribution {
    mean: Vec<f64>,
    covariance: Covariance,
    shrinkage_lambda: f64,
    sample_count: usize,
    projection: Option<Projection>,
}

impl SegmentDistribution {
    /// Mean in the space the covariance lives in (the reduced space when a
    /// projection is active).
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn shrinkage_lambda(&self) -> f64 {
        self.shrinkage_lambda
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// Length of the vectors accepted by [`mahalanobis`].
    pub fn input_dim(&self) -> usize {
        self.projection
            .as_ref()
            .map_or(self.mean.len(), |p| p.center.len())
    }

    /// Number of retained principal components, if reduced.
    pub fn reduced_rank(&self) -> Option<usize> {
        self.projection.as_ref().map(|p| p.rank)
    }

    pub fn is_low_rank(&self) -> bool {
        matches!(self.covariance, Covariance::LowRank { .. })
    }

    /// Entry `(i, j)` of the shrunk covariance.
    pub fn covariance_entry(&self, i: usize, j: usize) -> f64 {
        let d = self.mean.len();
        match &self.covariance {
            Covariance::Dense { matrix, .. } => matrix[i * d + j],
            Covariance::LowRank {
                factors,
                rows,
                diag,
                ..
            } => {
                let cross: f64 = (0..*rows)
                    .map(|k| factors[k * d + i] * factors[k * d + j])
                    .sum();
                cross + if i == j { *diag } else { 0.0 }
            }
        }
    }

    fn quadratic(&self, v: &[f64]) -> f64 {
        match &self.covariance {
            Covariance::Dense { chol, .. } => chol.inv_quadratic(v),
            Covariance::LowRank {
                factors,
                rows,
                diag,
                chol,
            } => {
                let d = v.len();
                let w: Vec<f64> = (0..*rows)
                    .map(|k| {
                        factors[k * d..(k + 1) * d]
                            .iter()
                            .zip(v)
                            .map(|(a, b)| a * b)
                            .sum()
                    })
                    .collect();
                let norm: f64 = v.iter().map(|x| x * x).sum();
                (norm - chol.inv_quadratic(&w)) / diag
            }
        }
    }
}

/// Fits mean and shrunk covariance to the segment vectors of `grid`.
pub fn fit_distribution(grid: &SegmentGrid, lambda: f64) -> Result<SegmentDistribution> {
    fit_vectors(&grid.vectors(), lambda)
}

pub fn fit_vectors<V: AsRef<[f64]> + Sync>(
    samples: &[V],
    lambda: f64,
) -> Result<SegmentDistribution> {
    fit_vectors_with(samples, lambda, CovarianceForm::Auto)
}

fn centered<V: AsRef<[f64]> + Sync>(samples: &[V]) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::EmptyInput(format!(
            "need at least 2 samples to fit a distribution, got {n}"
        )));
    }
    let d = samples[0].as_ref().len();
    if d == 0 {
        return Err(Error::EmptyInput("zero-length sample vectors".into()));
    }
    if samples.iter().any(|s| s.as_ref().len() != d) {
        return Err(Error::DimensionMismatch("sample vectors differ in length".into()));
    }
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s.as_ref()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut xc = vec![0.0; n * d];
    xc.par_chunks_mut(d).zip(samples).for_each(|(row, s)| {
        for ((out, v), m) in row.iter_mut().zip(s.as_ref()).zip(&mean) {
            *out = v - m;
        }
    });
    Ok((mean, xc, d))
}

pub fn fit_vectors_with<V: AsRef<[f64]> + Sync>(
    samples: &[V],
    lambda: f64,
    form: CovarianceForm,
) -> Result<SegmentDistribution> {
    check_lambda(lambda)?;
    let n = samples.len();
    let (mean, xc, d) = centered(samples)?;
    let covariance = shrunk_covariance(xc, n, d, lambda, form)?;
    Ok(SegmentDistribution {
        mean,
        covariance,
        shrinkage_lambda: lambda,
        sample_count: n,
        projection: None,
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!(
            "shrinkage lambda must lie in [0, 1], got {lambda}"
        )));
    }
    Ok(())
}

fn shrunk_covariance(
    mut xc: Vec<f64>,
    n: usize,
    d: usize,
    lambda: f64,
    form: CovarianceForm,
) -> Result<Covariance> {
    let trace = xc.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64;
    let diag = lambda * trace / d as f64;
    let scale = ((1.0 - lambda) / (n - 1) as f64).sqrt();
    xc.par_iter_mut().for_each(|v| *v *= scale);

    let dense = match form {
        CovarianceForm::Auto => d <= n,
        CovarianceForm::Dense => true,
        CovarianceForm::LowRank => false,
    };
    if dense {
        // Σ = UᵀU + diag·I
        let mut matrix = vec![0.0; d * d];
        matrix.par_chunks_mut(d).enumerate().for_each(|(i, row)| {
            for (j, slot) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += xc[k * d + i] * xc[k * d + j];
                }
                *slot = acc + if i == j { diag } else { 0.0 };
            }
        });
        let chol = Cholesky::factor(matrix.clone(), d).ok_or_else(|| {
            Error::SingularCovariance(format!(
                "{d}-dimensional covariance from {n} samples with lambda {lambda}"
            ))
        })?;
        Ok(Covariance::Dense { matrix, chol })
    } else {
        if !(diag > 0.0) {
            return Err(Error::SingularCovariance(format!(
                "{d}-dimensional covariance from {n} samples has no positive diagonal \
                 (lambda {lambda}, trace {trace})"
            )));
        }
        let mut inner = gram(&xc, n, d);
        for i in 0..n {
            inner[i * n + i] += diag;
        }
        let chol = Cholesky::factor(inner, n)
            .ok_or_else(|| Error::SingularCovariance("low-rank inner system".into()))?;
        Ok(Covariance::LowRank {
            factors: xc,
            rows: n,
            diag,
            chol,
        })
    }
}

/// Fits after projecting onto the leading principal components that explain
/// at least `variance_fraction` of the total variance.
pub fn fit_reduced<V: AsRef<[f64]> + Sync>(
    samples: &[V],
    lambda: f64,
    variance_fraction: f64,
) -> Result<SegmentDistribution> {
    check_lambda(lambda)?;
    if !(variance_fraction > 0.0 && variance_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "variance fraction must lie in (0, 1], got {variance_fraction}"
        )));
    }
    let n = samples.len();
    let (center, xc, d) = centered(samples)?;
    let g = gram(&xc, n, d);
    let eig = nalgebra::SymmetricEigen::new(nalgebra::DMatrix::from_row_slice(n, n, &g));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let total: f64 = eig.eigenvalues.iter().filter(|v| **v > 0.0).sum();
    if !(total > 0.0) {
        return Err(Error::SingularCovariance("samples have zero variance".into()));
    }
    let mut kept = Vec::new();
    let mut acc = 0.0;
    for &k in &order {
        let value = eig.eigenvalues[k];
        if value <= total * 1e-12 {
            break;
        }
        kept.push(k);
        acc += value;
        if acc >= variance_fraction * total {
            break;
        }
    }
    let rank = kept.len();
    // principal direction k: Xcᵀ u_k / sqrt(g_k); sample scores: sqrt(g_k)·u_k
    let mut basis = vec![0.0; rank * d];
    basis.par_chunks_mut(d).zip(&kept).for_each(|(row, &k)| {
        let norm = eig.eigenvalues[k].sqrt();
        for i in 0..n {
            let u = eig.eigenvectors[(i, k)] / norm;
            for (b, x) in row.iter_mut().zip(&xc[i * d..(i + 1) * d]) {
                *b += u * x;
            }
        }
    });
    let scores: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            kept.iter()
                .map(|&k| eig.eigenvalues[k].sqrt() * eig.eigenvectors[(i, k)])
                .collect()
        })
        .collect();
    let mut dist = fit_vectors_with(&scores, lambda, CovarianceForm::Auto)?;
    dist.projection = Some(Projection {
        center,
        basis,
        rank,
    });
    Ok(dist)
}

/// `sqrt((x − μ)ᵀ Σ⁻¹ (x − μ))`.
pub fn mahalanobis(x: &[f64], dist: &SegmentDistribution) -> Result<f64> {
    if x.len() != dist.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "vector length {} vs distribution dimension {}",
            x.len(),
            dist.input_dim()
        )));
    }
    let reduced;
    let x = match &dist.projection {
        Some(p) => {
            reduced = p.apply(x);
            reduced.as_slice()
        }
        None => x,
    };
    let v: Vec<f64> = x.iter().zip(&dist.mean).map(|(a, m)| a - m).collect();
    if v.iter().all(|e| *e == 0.0) {
        return Ok(0.0);
    }
    Ok(dist.quadratic(&v).max(0.0).sqrt())
}

/// Mahalanobis distance of every segment in `grid`, in grid order.
pub fn score_grid(grid: &SegmentGrid, dist: &SegmentDistribution) -> Result<Vec<f64>> {
    grid.segments()
        .par_iter()
        .map(|s| mahalanobis(&s.vector, dist))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Unimodal,
    Bimodal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub distances: Vec<f64>,
    pub modality: Modality,
    pub separation_score: f64,
    pub threshold: f64,
    pub low_group: GroupStats,
    pub high_group: GroupStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

/// Separation above which a two-group split counts as bimodal.
pub const BIMODAL_SEPARATION: f64 = 2.0;
const SEPARATION_EPS: f64 = 1e-12;

fn group_stats(sorted: &[f64]) -> GroupStats {
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    GroupStats {
        count: sorted.len(),
        mean,
        std: var.sqrt(),
    }
}

/// Splits the distances with an exact 1-D two-means partition and scores the
/// gap as `|m₂ − m₁| / (s₁ + s₂ + ε)`. Bimodal iff the score exceeds 2.
pub fn modality_report(distances: &[f64]) -> Result<DistanceReport> {
    if distances.len() < 4 {
        return Err(Error::EmptyInput(format!(
            "modality report needs at least 4 distances, got {}",
            distances.len()
        )));
    }
    if let Some(bad) = distances.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("invalid distance {bad}")));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();

    if sorted[0] == sorted[n - 1] {
        let all = group_stats(&sorted);
        return Ok(DistanceReport {
            distances: distances.to_vec(),
            modality: Modality::Unimodal,
            separation_score: 0.0,
            threshold: sorted[0],
            low_group: all,
            high_group: all,
        });
    }

    // prefix sums for O(1) within-group sum of squares
    let mut sum = vec![0.0; n + 1];
    let mut sq = vec![0.0; n + 1];
    for (i, v) in sorted.iter().enumerate() {
        sum[i + 1] = sum[i] + v;
        sq[i + 1] = sq[i] + v * v;
    }
    let sse = |lo: usize, hi: usize| {
        let k = (hi - lo) as f64;
        let s = sum[hi] - sum[lo];
        (sq[hi] - sq[lo]) - s * s / k
    };
    let mut best = (f64::INFINITY, 1);
    for split in 1..n {
        if sorted[split - 1] == sorted[split] {
            continue;
        }
        let cost = sse(0, split) + sse(split, n);
        if cost < best.0 {
            best = (cost, split);
        }
    }
    let low = group_stats(&sorted[..best.1]);
    let high = group_stats(&sorted[best.1..]);
    let separation_score = (high.mean - low.mean).abs() / (low.std + high.std + SEPARATION_EPS);
    Ok(DistanceReport {
        distances: distances.to_vec(),
        modality: if separation_score > BIMODAL_SEPARATION {
            Modality::Bimodal
        } else {
            Modality::Unimodal
        },
        separation_score,
        threshold: 0.5 * (low.mean + high.mean),
        low_group: low,
        high_group: high,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Equal-width bins over `[min, max]`, last bin closed. All-equal input
/// yields one degenerate bin holding every value.
pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    if bins < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 bins, got {bins}")));
    }
    if values.is_empty() {
        return Err(Error::EmptyInput("histogram of no values".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Ok(vec![HistogramBin {
            left: min,
            right: max,
            count: values.len(),
        }]);
    }
    let width = (max - min) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let idx = (((v - min) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            left: min + width * i as f64,
            right: if i + 1 == bins { max } else { min + width * (i + 1) as f64 },
            count,
        })
        .collect())
}

pub const HISTOGRAM_HEADER: &str = "bin_left,bin_right,count";

/// Writes `bin_left,bin_right,count` rows for external plotting.
pub fn export_histogram(distances: &[f64], path: impl AsRef<Path>, bins: usize) -> Result<()> {
    let rows = histogram(distances, bins)?;
    let mut out = Vec::new();
    writeln!(out, "{HISTOGRAM_HEADER}").expect("write to vec");
    for b in rows {
        writeln!(out, "{},{},{}", b.left, b.right, b.count).expect("write to vec");
    }
    write_atomic(path.as_ref(), &out)
}

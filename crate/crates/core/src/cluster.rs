//! Isolating phase: exact DBSCAN over segment vectors.
//!
//! Neighborhoods are self-inclusive: a point is core when at least
//! `min_pts` points (itself included) lie within `eps`. Clusters are the
//! connected components of core points under the eps relation, extended by
//! the border points they reach. Points reached by no core point are Noise.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Euclidean distance divided by sqrt(dimension).
    #[default]
    Rms,
    Euclidean,
    /// `1 - cos(a, b)`.
    Cosine,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Rms => "rms",
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rms" => Ok(Metric::Rms),
            "euclidean" | "l2" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::InvalidParameter(format!("unknown distance kind {other:?}"))),
        }
    }
}

impl Metric {
    /// Distance without the length check; callers guarantee equal lengths.
    #[inline]
    pub(crate) fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Rms => {
                if a.is_empty() {
                    return 0.0;
                }
                (sq_dist(a, b) / a.len() as f64).sqrt()
            }
            Metric::Euclidean => sq_dist(a, b).sqrt(),
            Metric::Cosine => {
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for (x, y) in a.iter().zip(b) {
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                match (na == 0.0, nb == 0.0) {
                    (true, true) => 0.0,
                    (true, false) | (false, true) => 1.0,
                    _ => (1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 2.0),
                }
            }
        }
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Dimension-normalized Euclidean distance `sqrt(Σ(a_i − b_i)² / d)`.
pub fn distance(a: &[f64], b: &[f64]) -> Result<f64> {
    distance_with(Metric::Rms, a, b)
}

pub fn distance_with(metric: Metric, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "vector lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(metric.eval(a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub eps: f64,
    pub min_pts: usize,
    #[serde(default)]
    pub metric: Metric,
}

impl ClusterParams {
    pub fn new(eps: f64, min_pts: usize) -> Result<Self> {
        let p = Self {
            eps,
            min_pts,
            metric: Metric::Rms,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::InvalidParameter(format!("eps must be > 0, got {}", self.eps)));
        }
        if self.min_pts == 0 {
            return Err(Error::InvalidParameter("min_pts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Noise,
    /// Cluster id, numbered from 1.
    Cluster(u32),
}

impl Label {
    pub fn is_noise(self) -> bool {
        self == Label::Noise
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLabels {
    labels: Vec<Label>,
    cluster_count: usize,
}

impl ClusterLabels {
    /// Validates and wraps a label vector: every cluster id is in
    /// `1..=cluster_count` and each id is used.
    pub fn from_labels(labels: Vec<Label>, cluster_count: usize) -> Result<Self> {
        let mut used = vec![false; cluster_count];
        for l in &labels {
            if let Label::Cluster(id) = *l {
                let id = id as usize;
                if id == 0 || id > cluster_count {
                    return Err(Error::InvalidParameter(format!(
                        "cluster id {id} outside 1..={cluster_count}"
                    )));
                }
                used[id - 1] = true;
            }
        }
        if let Some(missing) = used.iter().position(|u| !u) {
            return Err(Error::InvalidParameter(format!(
                "cluster id {} unused",
                missing + 1
            )));
        }
        Ok(Self {
            labels,
            cluster_count,
        })
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_count
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_noise()).count()
    }

    /// Members of each cluster, indexed by `id - 1`.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cluster_count];
        for (i, l) in self.labels.iter().enumerate() {
            if let Label::Cluster(id) = l {
                out[*id as usize - 1].push(i);
            }
        }
        out
    }
}

/// Indices of the points labeled Noise, ascending.
pub fn extract_noise(labels: &ClusterLabels) -> Vec<usize> {
    labels
        .labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.is_noise().then_some(i))
        .collect()
}

/// Indices within `eps` of point `q` (including `q`), ascending.
pub fn region_query<V: AsRef<[f64]>>(
    points: &[V],
    q: usize,
    eps: f64,
    metric: Metric,
) -> Result<Vec<usize>> {
    let center = points
        .get(q)
        .ok_or_else(|| Error::InvalidParameter(format!("query index {q} out of range")))?
        .as_ref();
    let mut out = Vec::new();
    for (p, point) in points.iter().enumerate() {
        let point = point.as_ref();
        if p == q || distance_with(metric, center, point)? <= eps {
            out.push(p);
        }
    }
    Ok(out)
}

/// Dense symmetric pairwise distance matrix.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    /// Computes all pairwise distances; rows are filled in parallel.
    pub fn compute<V: AsRef<[f64]> + Sync>(points: &[V], metric: Metric) -> Result<Self> {
        let n = points.len();
        if let Some(first) = points.first() {
            let d = first.as_ref().len();
            if let Some(bad) = points.iter().find(|p| p.as_ref().len() != d) {
                return Err(Error::DimensionMismatch(format!(
                    "vector lengths {d} and {}",
                    bad.as_ref().len()
                )));
            }
        }
        let mut values = vec![0.0; n * n];
        values
            .par_chunks_mut(n.max(1))
            .enumerate()
            .for_each(|(i, row)| {
                let a = points[i].as_ref();
                for (j, slot) in row.iter_mut().enumerate().skip(i + 1) {
                    *slot = metric.eval(a, points[j].as_ref());
                }
            });
        for i in 0..n {
            for j in 0..i {
                values[i * n + j] = values[j * n + i];
            }
        }
        Ok(Self { n, values })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Self-inclusive eps-neighborhood of every point, ascending.
    pub fn neighborhoods(&self, eps: f64) -> Vec<Vec<usize>> {
        (0..self.n)
            .into_par_iter()
            .map(|i| {
                self.row(i)
                    .iter()
                    .enumerate()
                    .filter_map(|(j, d)| (j == i || *d <= eps).then_some(j))
                    .collect()
            })
            .collect()
    }

    /// Distance from each point to its `k`-th closest point, counting the
    /// point itself as the first (so `k = 1` gives 0). When `k` exceeds the
    /// point count the farthest distance is used.
    pub fn kth_distances(&self, k: usize) -> Vec<f64> {
        let k = k.clamp(1, self.n.max(1));
        (0..self.n)
            .into_par_iter()
            .map(|i| {
                let mut row = self.row(i).to_vec();
                row[i] = 0.0;
                let (_, kth, _) = row.select_nth_unstable_by(k - 1, f64::total_cmp);
                *kth
            })
            .collect()
    }
}

/// DBSCAN over raw vectors.
pub fn dbscan<V: AsRef<[f64]> + Sync>(points: &[V], params: &ClusterParams) -> Result<ClusterLabels> {
    if points.is_empty() {
        return Err(Error::EmptyInput("dbscan needs at least one point".into()));
    }
    params.validate()?;
    let matrix = DistanceMatrix::compute(points, params.metric)?;
    dbscan_matrix(&matrix, params.eps, params.min_pts)
}

/// DBSCAN over a precomputed distance matrix.
///
/// Points are scanned in index order; each unvisited core point seeds a new
/// cluster that is expanded breadth-first. A border point reachable from
/// several clusters keeps the first cluster that reaches it.
pub fn dbscan_matrix(matrix: &DistanceMatrix, eps: f64, min_pts: usize) -> Result<ClusterLabels> {
    if matrix.is_empty() {
        return Err(Error::EmptyInput("dbscan needs at least one point".into()));
    }
    ClusterParams::new(eps, min_pts)?;
    let neighbors = matrix.neighborhoods(eps);
    Ok(expand(&neighbors, min_pts))
}

fn expand(neighbors: &[Vec<usize>], min_pts: usize) -> ClusterLabels {
    let n = neighbors.len();
    let is_core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();
    let mut labels: Vec<Option<Label>> = vec![None; n];
    let mut cluster = 0u32;
    let mut queue = VecDeque::new();

    for p in 0..n {
        if labels[p].is_some() {
            continue;
        }
        if !is_core[p] {
            labels[p] = Some(Label::Noise);
            continue;
        }
        cluster += 1;
        labels[p] = Some(Label::Cluster(cluster));
        queue.extend(neighbors[p].iter().copied().filter(|q| *q != p));
        while let Some(q) = queue.pop_front() {
            match labels[q] {
                Some(Label::Cluster(_)) => continue,
                // border point previously marked as noise
                Some(Label::Noise) => labels[q] = Some(Label::Cluster(cluster)),
                None => {
                    labels[q] = Some(Label::Cluster(cluster));
                    if is_core[q] {
                        queue.extend(neighbors[q].iter().copied());
                    }
                }
            }
        }
    }

    ClusterLabels {
        labels: labels.into_iter().map(|l| l.unwrap_or(Label::Noise)).collect(),
        cluster_count: cluster as usize,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(values: &[f64]) -> Vec<Vec<f64>> {
        values.iter().map(|v| vec![*v]).collect()
    }

    #[test]
    fn distance_examples() {
        let a = vec![0.3; 17];
        assert_eq!(distance(&a, &a).unwrap(), 0.0);
        for d in [1, 2, 4800] {
            let z = vec![0.0; d];
            let o = vec![1.0; d];
            assert!((distance(&z, &o).unwrap() - 1.0).abs() < 1e-12);
        }
        let got = distance(&[0.0, 0.0], &[0.6, 0.8]).unwrap();
        assert!((got - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(distance(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn other_metrics() {
        let e = distance_with(Metric::Euclidean, &[0.0, 0.0], &[0.6, 0.8]).unwrap();
        assert!((e - 1.0).abs() < 1e-12);
        let c = distance_with(Metric::Cosine, &[1.0, 0.0], &[0.0, 2.0]).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
        let c = distance_with(Metric::Cosine, &[1.0, 1.0], &[2.0, 2.0]).unwrap();
        assert!(c.abs() < 1e-12);
        assert_eq!(distance_with(Metric::Cosine, &[0.0], &[0.0]).unwrap(), 0.0);
        assert_eq!("Euclidean".parse::<Metric>().unwrap(), Metric::Euclidean);
        assert!("manhattan".parse::<Metric>().is_err());
    }

    #[test]
    fn region_query_examples() {
        let p = pts(&[0.0, 0.1, 0.2, 0.9, 1.0]);
        assert_eq!(region_query(&p, 1, 0.15, Metric::Rms).unwrap(), vec![0, 1, 2]);
        assert_eq!(region_query(&p, 3, 0.01, Metric::Rms).unwrap(), vec![3]);
        assert_eq!(
            region_query(&p, 0, 1.0, Metric::Rms).unwrap(),
            vec![0, 1, 2, 3, 4]
        );
        assert!(region_query(&p, 9, 0.1, Metric::Rms).is_err());
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let p = vec![vec![0.25, 0.5]; 12];
        let labels = dbscan(&p, &ClusterParams::new(0.01, 12).unwrap()).unwrap();
        assert_eq!(labels.cluster_count(), 1);
        assert!(extract_noise(&labels).is_empty());
    }

    #[test]
    fn min_pts_above_n_is_all_noise() {
        let p = vec![vec![0.25, 0.5]; 12];
        let labels = dbscan(&p, &ClusterParams::new(1.0, 13).unwrap()).unwrap();
        assert_eq!(labels.cluster_count(), 0);
        assert_eq!(extract_noise(&labels), (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn border_point_goes_to_first_cluster() {
        // two dense groups with a shared border point at 0.5
        let p = pts(&[0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 0.8, 0.9, 1.0]);
        let labels = dbscan(&p, &ClusterParams::new(0.21, 4).unwrap()).unwrap();
        assert_eq!(labels.cluster_count(), 2);
        assert_eq!(labels.labels()[4], Label::Cluster(1));
        assert_eq!(labels.labels()[5], Label::Cluster(2));
    }

    #[test]
    fn rejects_bad_input() {
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(
            dbscan(&empty, &ClusterParams::new(0.1, 1).unwrap()),
            Err(Error::EmptyInput(_))
        ));
        assert!(ClusterParams::new(0.0, 1).is_err());
        assert!(ClusterParams::new(0.1, 0).is_err());
        assert!(ClusterParams::new(f64::NAN, 1).is_err());
        let ragged = vec![vec![0.0], vec![0.0, 1.0]];
        assert!(dbscan(&ragged, &ClusterParams::new(0.1, 1).unwrap()).is_err());
    }

    #[test]
    fn label_validation() {
        assert!(ClusterLabels::from_labels(vec![Label::Cluster(2)], 2).is_err());
        assert!(ClusterLabels::from_labels(vec![Label::Cluster(3)], 2).is_err());
        let ok = ClusterLabels::from_labels(vec![Label::Noise, Label::Cluster(1)], 1).unwrap();
        assert_eq!(extract_noise(&ok), vec![0]);
        let clean = ClusterLabels::from_labels(vec![Label::Cluster(1); 3], 1).unwrap();
        assert!(extract_noise(&clean).is_empty());
    }

    #[test]
    fn kth_distances_count_self() {
        let p = pts(&[0.0, 0.1, 0.3]);
        let m = DistanceMatrix::compute(&p, Metric::Euclidean).unwrap();
        assert_eq!(m.kth_distances(1), vec![0.0, 0.0, 0.0]);
        let k2 = m.kth_distances(2);
        assert!((k2[0] - 0.1).abs() < 1e-12 && (k2[2] - 0.2).abs() < 1e-12);
        let k9 = m.kth_distances(9);
        assert!((k9[0] - 0.3).abs() < 1e-12);
    }
}

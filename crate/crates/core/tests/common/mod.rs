#![allow(dead_code)]

use patch_defense::{ClusterLabels, Label};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rms(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (s / a.len() as f64).sqrt()
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Brute-force DBSCAN: union-find over core points, then each border point
/// joins the adjacent component whose smallest core index is lowest.
/// Returns a component id per point (`None` for noise), ids ordered by the
/// smallest core index of each component.
pub fn oracle_dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let adj: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| i == j || rms(&points[i], &points[j]) <= eps).collect())
        .collect();
    let core: Vec<bool> = adj.iter().map(|row| row.iter().filter(|b| **b).count() >= min_pts).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if core[i] && core[j] && adj[i][j] {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut root_id = vec![None; n];
    let mut next = 0;
    for i in 0..n {
        if core[i] {
            let r = find(&mut parent, i);
            if root_id[r].is_none() {
                root_id[r] = Some(next);
                next += 1;
            }
        }
    }
    (0..n)
        .map(|i| {
            if core[i] {
                root_id[find(&mut parent, i)]
            } else {
                (0..n)
                    .filter(|&j| core[j] && adj[i][j])
                    .filter_map(|j| root_id[find(&mut parent, j)])
                    .min()
            }
        })
        .collect()
}

/// Library labels with cluster ids shifted to start at 0, as the oracle's do.
pub fn as_options(labels: &ClusterLabels) -> Vec<Option<usize>> {
    labels
        .labels()
        .iter()
        .map(|l| match l {
            Label::Noise => None,
            Label::Cluster(c) => Some(*c as usize - 1),
        })
        .collect()
}

/// Gaussian blobs plus scattered outliers.
pub fn random_instance(seed: u64) -> (Vec<Vec<f64>>, f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=200);
    let dims = rng.random_range(1..=16);
    let blobs = rng.random_range(1..=5);
    let centers: Vec<Vec<f64>> = (0..blobs)
        .map(|_| (0..dims).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let spread = rng.random_range(0.01..0.15);
    let points = (0..n)
        .map(|_| {
            if rng.random_bool(0.15) {
                (0..dims).map(|_| rng.random_range(0.0..1.0)).collect()
            } else {
                let c = &centers[rng.random_range(0..blobs)];
                c.iter().map(|v| v + spread * (rng.random::<f64>() - 0.5)).collect()
            }
        })
        .collect();
    let eps = rng.random_range(0.005..0.3);
    let min_pts = rng.random_range(1..=12);
    (points, eps, min_pts)
}

mod common;

use common::{as_options, oracle_dbscan, random_instance};
use patch_defense::{dbscan, extract_noise, ClusterParams};
use proptest::prelude::*;

fn noise_set(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<usize> {
    let labels = dbscan(points, &ClusterParams::new(eps, min_pts).unwrap()).unwrap();
    extract_noise(&labels)
}

#[test]
fn matches_oracle_on_seeded_instances() {
    for seed in 0..60 {
        let (points, eps, min_pts) = random_instance(seed);
        let labels = dbscan(&points, &ClusterParams::new(eps, min_pts).unwrap()).unwrap();
        assert_eq!(as_options(&labels), oracle_dbscan(&points, eps, min_pts), "seed {seed}");
    }
}

#[test]
fn min_pts_one_has_no_noise() {
    let (points, eps, _) = random_instance(7);
    assert!(noise_set(&points, eps, 1).is_empty());
}

#[test]
fn unreachable_min_pts_is_all_noise() {
    let (points, eps, _) = random_instance(11);
    assert_eq!(noise_set(&points, eps, points.len() + 1).len(), points.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn noise_shrinks_as_eps_grows(seed in 0u64..10_000, bump in 1.0f64..3.0) {
        let (points, eps, min_pts) = random_instance(seed);
        let small = noise_set(&points, eps, min_pts);
        let large = noise_set(&points, eps * bump, min_pts);
        prop_assert!(large.iter().all(|i| small.contains(i)));
    }

    #[test]
    fn noise_grows_with_min_pts(seed in 0u64..10_000, extra in 1usize..10) {
        let (points, eps, min_pts) = random_instance(seed);
        let low = noise_set(&points, eps, min_pts);
        let high = noise_set(&points, eps, min_pts + extra);
        prop_assert!(low.iter().all(|i| high.contains(i)));
    }

    #[test]
    fn noise_and_cores_survive_permutation(seed in 0u64..10_000, shift in 1usize..200) {
        let (points, eps, min_pts) = random_instance(seed);
        let n = points.len();
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| points[i].clone()).collect();
        let mut original = noise_set(&points, eps, min_pts);
        let mut moved: Vec<usize> = noise_set(&permuted, eps, min_pts).iter().map(|&i| perm[i]).collect();
        original.sort_unstable();
        moved.sort_unstable();
        prop_assert_eq!(original, moved);
    }
}

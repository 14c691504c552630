use patch_defense::analyze::{fit_vectors, histogram, mahalanobis, modality_report, Modality};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

#[test]
fn recovers_gaussian_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mu = [0.2, -1.0, 3.0];
    let sigma = [0.5, 1.0, 2.0];
    let samples: Vec<Vec<f64>> = (0..100)
        .map(|_| (0..3).map(|k| Normal::new(mu[k], sigma[k]).unwrap().sample(&mut rng)).collect())
        .collect();
    let dist = fit_vectors(&samples, 0.01).unwrap();
    for k in 0..3 {
        assert!((dist.mean()[k] - mu[k]).abs() < 3.0 * sigma[k] / 10.0);
    }
}

#[test]
fn unit_variance_one_dimension() {
    // samples ±1 have population-corrected variance n/(n-1); scale accordingly
    let samples: Vec<Vec<f64>> = (0..4).map(|i| vec![if i % 2 == 0 { 1.0 } else { -1.0 }]).collect();
    let dist = fit_vectors(&samples, 0.0).unwrap();
    let var = 4.0 / 3.0;
    let d = mahalanobis(&[0.5], &dist).unwrap();
    assert!((d - 0.5 / f64::sqrt(var)).abs() < 1e-12);
}

#[test]
fn gaussian_sample_is_unimodal() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let normal = Normal::new(10.0, 1.0).unwrap();
    let d: Vec<f64> = (0..500).map(|_| normal.sample(&mut rng)).collect();
    assert_eq!(modality_report(&d).unwrap().modality, Modality::Unimodal);
}

#[test]
fn two_tight_groups_are_bimodal() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = Normal::new(1.0, 0.05).unwrap();
    let b = Normal::new(5.0, 0.05).unwrap();
    let mut d: Vec<f64> = (0..500).map(|_| a.sample(&mut rng)).collect();
    d.extend((0..60).map(|_| b.sample(&mut rng)));
    let r = modality_report(&d).unwrap();
    assert_eq!(r.modality, Modality::Bimodal);
    assert!(r.separation_score > 20.0);
    assert_eq!(r.high_group.count, 60);
}

#[test]
fn uniform_histogram_is_flat() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let u = Uniform::new(0.0, 1.0).unwrap();
    let v: Vec<f64> = (0..1000).map(|_| u.sample(&mut rng)).collect();
    let bins = histogram(&v, 10).unwrap();
    assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 1000);
    assert!(bins.iter().all(|b| b.count.abs_diff(100) <= 50));
}

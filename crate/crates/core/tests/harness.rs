use patch_defense::config::{DefenseConfig, MinPts};
use patch_defense::harness::calibrate_images;
use patch_defense::synth::{textured_host, TextureParams, WaveBand};
use patch_defense::{defend, Image};

fn two_texture_corpus() -> Vec<Image> {
    let fine = TextureParams {
        base_low: 0.15,
        base_high: 0.35,
        waves: vec![WaveBand::new(0.1, 150.0, 400.0), WaveBand::new(0.06, 6.0, 14.0)],
        grain: 0.0,
    };
    let mut images = Vec::new();
    for i in 0..4 {
        images.push(textured_host(224, 224, 3, &TextureParams::default(), 500 + i).unwrap());
        images.push(textured_host(224, 224, 3, &fine, 600 + i).unwrap());
    }
    images
}

fn cfg() -> DefenseConfig {
    DefenseConfig {
        min_pts: MinPts::Fraction(0.6),
        ..DefenseConfig::default()
    }
}

#[test]
fn calibration_images_are_mostly_clean() {
    let images = two_texture_corpus();
    let cal = calibrate_images(&images, &cfg()).unwrap();
    assert!(!cal.floored);
    let cfg = cal.apply(&cfg());
    for (i, img) in images.iter().enumerate() {
        let out = defend(img, &cfg).unwrap();
        let frac = out.anomalous_segment_indices.len() as f64 / out.labels.labels().len() as f64;
        assert!(frac <= 0.05, "image {i}: {frac} of segments flagged at eps {}", cfg.eps);
    }
}

#[test]
fn duplicating_the_corpus_keeps_eps() {
    let images = two_texture_corpus();
    let once = calibrate_images(&images, &cfg()).unwrap();
    let doubled: Vec<Image> = images.iter().chain(images.iter()).cloned().collect();
    let twice = calibrate_images(&doubled, &cfg()).unwrap();
    assert_eq!(once.params.eps, twice.params.eps);
}

//! Seeded textured host images for experiments and tests.
//!
//! A host is a per-channel base color plus a sum of plane waves with random
//! orientation, wavelength and phase, optionally with i.i.d. Gaussian grain.
//! The default mixes one wave longer than the image, giving a large-scale
//! shading, with two short texture waves.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::ensure_dir;
use crate::image::{save_image, Image};

/// One plane wave with wavelength drawn from `[wavelength_min, wavelength_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveBand {
    pub amplitude: f64,
    pub wavelength_min: f64,
    pub wavelength_max: f64,
}

impl WaveBand {
    pub fn new(amplitude: f64, wavelength_min: f64, wavelength_max: f64) -> Self {
        Self {
            amplitude,
            wavelength_min,
            wavelength_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureParams {
    pub base_low: f64,
    pub base_high: f64,
    pub waves: Vec<WaveBand>,
    /// Standard deviation of per-sample Gaussian grain.
    pub grain: f64,
}

impl Default for TextureParams {
    fn default() -> Self {
        Self {
            base_low: 0.3,
            base_high: 0.7,
            waves: vec![
                WaveBand::new(0.15, 150.0, 400.0),
                WaveBand::new(0.08, 12.0, 36.0),
                WaveBand::new(0.05, 12.0, 36.0),
            ],
            grain: 0.0,
        }
    }
}

struct Wave {
    amplitude: f64,
    kx: f64,
    ky: f64,
    phase: f64,
    /// per-channel gain in [0.5, 1]
    gains: Vec<f64>,
}

pub fn textured_host(
    height: usize,
    width: usize,
    channels: usize,
    params: &TextureParams,
    seed: u64,
) -> Result<Image> {
    let bad_band = params
        .waves
        .iter()
        .any(|b| !(b.wavelength_min > 0.0 && b.wavelength_min <= b.wavelength_max));
    if params.base_low > params.base_high || bad_band {
        return Err(Error::InvalidParameter(format!("bad texture params {params:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<f64> = (0..channels)
        .map(|_| rng.random_range(params.base_low..=params.base_high))
        .collect();
    let waves: Vec<Wave> = params
        .waves
        .iter()
        .map(|band| {
            let lambda = rng.random_range(band.wavelength_min..=band.wavelength_max);
            let theta = rng.random_range(0.0..PI);
            let k = 2.0 * PI / lambda;
            Wave {
                amplitude: band.amplitude,
                kx: k * theta.cos(),
                ky: k * theta.sin(),
                phase: rng.random_range(0.0..2.0 * PI),
                gains: (0..channels).map(|_| rng.random_range(0.5..=1.0)).collect(),
            }
        })
        .collect();
    let grain = if params.grain > 0.0 {
        Some(Normal::new(0.0, params.grain).map_err(|e| Error::InvalidParameter(e.to_string()))?)
    } else {
        None
    };
    Image::from_fn(height, width, channels, |r, c, ch| {
        let mut v = base[ch];
        for w in &waves {
            v += w.amplitude * w.gains[ch] * (w.kx * c as f64 + w.ky * r as f64 + w.phase).sin();
        }
        if let Some(g) = &grain {
            v += g.sample(&mut rng);
        }
        v.clamp(0.0, 1.0)
    })
}

/// Writes `count` hosts as `host_000.png`, … into `dir`; host `i` uses seed
/// `seed + i`.
pub fn write_corpus(
    dir: &Path,
    count: usize,
    height: usize,
    width: usize,
    params: &TextureParams,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    (0..count)
        .map(|i| {
            let img = textured_host(height, width, 3, params, seed.wrapping_add(i as u64))?;
            let path = dir.join(format!("host_{i:03}.png"));
            save_image(&img, &path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_in_range() {
        let p = TextureParams {
            grain: 0.05,
            ..TextureParams::default()
        };
        let a = textured_host(40, 50, 3, &p, 9).unwrap();
        let b = textured_host(40, 50, 3, &p, 9).unwrap();
        let c = textured_host(40, 50, 3, &p, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn corpus_files() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_corpus(dir.path(), 3, 16, 16, &TextureParams::default(), 0).unwrap();
        assert_eq!(paths.len(), 3);
        assert!(paths.iter().all(|p| p.exists()));
    }
}

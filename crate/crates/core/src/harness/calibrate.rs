//! Data-driven choice of `eps` from a corpus of clean images.
//!
//! For each clean segment the distance to its `min_pts`-th nearest segment
//! (itself counted first) is the smallest `eps` that makes it a core point.
//! The calibrated `eps` is the nearest-rank 95th percentile of those
//! distances pooled over the corpus.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterParams, DistanceMatrix};
use crate::config::DefenseConfig;
use crate::error::{Error, Result};
use crate::image::{load_image, Image};
use crate::segment::segment;

pub const CALIBRATION_PERCENTILE: f64 = 0.95;
pub const EPS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub params: ClusterParams,
    pub images: usize,
    /// Segments per image used to resolve `min_pts`.
    pub segments: usize,
    /// True when the percentile was below [`EPS_FLOOR`].
    pub floored: bool,
}

impl Calibration {
    /// `cfg` with the calibrated `eps`.
    pub fn apply(&self, cfg: &DefenseConfig) -> DefenseConfig {
        DefenseConfig {
            eps: self.params.eps,
            ..*cfg
        }
    }
}

/// Nearest-rank percentile: the smallest value with at least `p·n` values
/// at or below it.
pub fn percentile_nearest_rank(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("percentile of no values".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("percentile {p} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p * sorted.len() as f64 - 1e-9).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

/// PNG files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn calibrate(clean_dir: &Path, cfg: &DefenseConfig) -> Result<Calibration> {
    let paths = list_images(clean_dir)?;
    let images = paths
        .iter()
        .filter_map(|p| match load_image(p) {
            Ok(img) => Some(img),
            Err(e) => {
                warn!("skipping {}: {e}", p.display());
                None
            }
        })
        .collect::<Vec<_>>();
    calibrate_images(&images, cfg)
}

pub fn calibrate_images(images: &[Image], cfg: &DefenseConfig) -> Result<Calibration> {
    if images.is_empty() {
        return Err(Error::EmptyInput("calibration corpus has no images".into()));
    }
    let per_image: Vec<(usize, Vec<f64>)> = images
        .par_iter()
        .map(|img| -> Result<(usize, Vec<f64>)> {
            let grid = segment(img, cfg.kernel, cfg.stride)?;
            let matrix = DistanceMatrix::compute(&grid.vectors(), cfg.distance_kind)?;
            let k = cfg.min_pts.resolve(grid.len());
            if k > grid.len() {
                warn!("min_pts {k} exceeds the {} segments of a calibration image", grid.len());
            }
            Ok((grid.len(), matrix.kth_distances(k)))
        })
        .collect::<Result<_>>()?;

    let segments = per_image[0].0;
    if per_image.iter().any(|(n, _)| *n != segments) {
        warn!("calibration images differ in segment count; min_pts resolved against {segments}");
    }
    let pooled: Vec<f64> = per_image.into_iter().flat_map(|(_, d)| d).collect();
    let raw = percentile_nearest_rank(&pooled, CALIBRATION_PERCENTILE)?;
    let floored = raw < EPS_FLOOR;
    if floored {
        warn!("calibrated eps {raw} is degenerate; using floor {EPS_FLOOR}");
    }
    let eps = raw.max(EPS_FLOOR);
    info!(
        "calibrated eps {eps} from {} segments over {} images",
        pooled.len(),
        images.len()
    );
    Ok(Calibration {
        params: ClusterParams {
            eps,
            min_pts: cfg.min_pts.resolve(segments),
            metric: cfg.distance_kind,
        },
        images: images.len(),
        segments,
        floored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MinPts;

    fn small_cfg() -> DefenseConfig {
        DefenseConfig {
            kernel: 8,
            stride: 4,
            min_pts: MinPts::Fraction(0.6),
            ..DefenseConfig::default()
        }
    }

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile_nearest_rank(&v, 0.95).unwrap(), 19.0);
        assert_eq!(percentile_nearest_rank(&v, 1.0).unwrap(), 20.0);
        assert_eq!(percentile_nearest_rank(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile_nearest_rank(&[3.0], 0.95).unwrap(), 3.0);
        assert!(percentile_nearest_rank(&[], 0.5).is_err());
    }

    #[test]
    fn constant_image_floors() {
        let img = Image::filled(32, 32, 3, 0.5).unwrap();
        let cal = calibrate_images(&[img], &small_cfg()).unwrap();
        assert!(cal.floored);
        assert_eq!(cal.params.eps, EPS_FLOOR);
        assert_eq!(cal.segments, 49);
        assert_eq!(cal.params.min_pts, 30);
    }

    #[test]
    fn empty_corpus() {
        assert!(matches!(
            calibrate_images(&[], &small_cfg()),
            Err(Error::EmptyInput(_))
        ));
        let dir = tempfile::tempdir().unwrap();
        assert!(calibrate(dir.path(), &small_cfg()).is_err());
    }

    #[test]
    fn duplication_keeps_eps() {
        let a = Image::from_fn(32, 32, 3, |r, c, k| ((r * 7 + c * 3 + k) % 11) as f64 / 10.0).unwrap();
        let b = Image::from_fn(32, 32, 3, |r, c, _| ((r + c) % 5) as f64 / 4.0).unwrap();
        let once = calibrate_images(&[a.clone(), b.clone()], &small_cfg()).unwrap();
        let twice = calibrate_images(&[a.clone(), b.clone(), a, b], &small_cfg()).unwrap();
        assert_eq!(once.params.eps, twice.params.eps);
    }
}

//! Segment → cluster → block pipeline.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::{info, warn};
use rayon::prelude::*;

use crate::cluster::{dbscan_matrix, extract_noise, ClusterLabels, DistanceMatrix};
use crate::config::{DefenseConfig, OverlapMode, Replacement};
use crate::error::{Error, Result};
use crate::fsutil::{ensure_dir, write_atomic};
use crate::image::{load_image, save_image, save_mask, Image, PixelMask};
use crate::segment::{segment, Segment, SegmentGrid};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTiming {
    pub segment: Duration,
    pub cluster: Duration,
    pub block: Duration,
}

#[derive(Debug, Clone)]
pub struct DefenseOutcome {
    pub sanitized: Image,
    pub anomaly_mask: PixelMask,
    pub anomalous_segment_indices: Vec<usize>,
    pub labels: ClusterLabels,
    pub timing: PhaseTiming,
    /// Set when every segment came back as Noise, which usually means
    /// `min_pts` exceeds what the image can support.
    pub all_noise: bool,
}

impl DefenseOutcome {
    pub fn segment_count(&self) -> usize {
        self.labels.len()
    }

    pub fn anomalous_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            0.0
        } else {
            self.anomalous_segment_indices.len() as f64 / self.labels.len() as f64
        }
    }

    pub fn anomaly_pixel_fraction(&self) -> f64 {
        let total = self.anomaly_mask.height() * self.anomaly_mask.width();
        self.anomaly_mask.count_ones() as f64 / total as f64
    }
}

/// Per-channel fill value of a segment under `mode`.
pub fn fill_values(seg: &Segment, channels: usize, mode: Replacement) -> Vec<f64> {
    let pixels = seg.vector.chunks_exact(channels);
    let count = (seg.vector.len() / channels) as f64;
    (0..channels)
        .map(|ch| {
            let values = pixels.clone().map(|p| p[ch]);
            let v = match mode {
                Replacement::Min => values.fold(f64::INFINITY, f64::min),
                Replacement::Max => values.fold(f64::NEG_INFINITY, f64::max),
                Replacement::Mean => values.sum::<f64>() / count,
            };
            v.clamp(0.0, 1.0)
        })
        .collect()
}

/// Sets every pixel of the segment to its own per-channel min, mean or max.
pub fn replace_segment(seg: &Segment, channels: usize, mode: Replacement) -> Segment {
    let fill = fill_values(seg, channels, mode);
    Segment {
        origin_row: seg.origin_row,
        origin_col: seg.origin_col,
        vector: fill.iter().copied().cycle().take(seg.vector.len()).collect(),
    }
}

/// Runs the full pipeline on one image.
pub fn defend(img: &Image, cfg: &DefenseConfig) -> Result<DefenseOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let grid = segment(img, cfg.kernel, cfg.stride)?;
    let seg_time = start.elapsed();
    let mut outcome = defend_grid(img, &grid, cfg)?;
    outcome.timing.segment = seg_time;
    Ok(outcome)
}

/// Clustering and blocking over an already segmented image.
pub fn defend_grid(img: &Image, grid: &SegmentGrid, cfg: &DefenseConfig) -> Result<DefenseOutcome> {
    cfg.validate()?;
    if grid.source_dims() != (img.height(), img.width(), img.channels()) {
        return Err(Error::DimensionMismatch("grid does not belong to image".into()));
    }
    let start = Instant::now();
    let params = cfg.cluster_params(grid.len());
    let matrix = DistanceMatrix::compute(&grid.vectors(), params.metric)?;
    let labels = dbscan_matrix(&matrix, params.eps, params.min_pts)?;
    let anomalous = extract_noise(&labels);
    let cluster_time = start.elapsed();

    let all_noise = !anomalous.is_empty() && anomalous.len() == grid.len();
    if all_noise {
        warn!(
            "all {} segments labeled noise (eps {}, min_pts {}); parameters are likely \
             inconsistent with the segment count",
            grid.len(),
            params.eps,
            params.min_pts
        );
    }

    let start = Instant::now();
    let sanitized = block(img, grid, &anomalous, cfg.replacement, cfg.overlap);
    let anomaly_mask = grid.footprint_union(&anomalous);
    let block_time = start.elapsed();

    Ok(DefenseOutcome {
        sanitized,
        anomaly_mask,
        anomalous_segment_indices: anomalous,
        labels,
        timing: PhaseTiming {
            segment: Duration::ZERO,
            cluster: cluster_time,
            block: block_time,
        },
        all_noise,
    })
}

/// Blocking phase. Fill values always come from the original segments.
pub fn block(
    img: &Image,
    grid: &SegmentGrid,
    anomalous: &[usize],
    mode: Replacement,
    overlap: OverlapMode,
) -> Image {
    let k = grid.kernel();
    let channels = img.channels();
    let mut out = img.clone();
    match overlap {
        OverlapMode::Sequential => {
            let mut sorted = anomalous.to_vec();
            sorted.sort_unstable();
            for i in sorted {
                let seg = &grid.segments()[i];
                let fill = fill_values(seg, channels, mode);
                for r in seg.origin_row..seg.origin_row + k {
                    for c in seg.origin_col..seg.origin_col + k {
                        for (ch, v) in fill.iter().enumerate() {
                            out.set(r, c, ch, *v);
                        }
                    }
                }
            }
        }
        OverlapMode::Union => {
            let (h, w) = (img.height(), img.width());
            let mut sums = vec![0.0; h * w * channels];
            let mut counts = vec![0u32; h * w];
            for &i in anomalous {
                let seg = &grid.segments()[i];
                let fill = fill_values(seg, channels, mode);
                for r in seg.origin_row..seg.origin_row + k {
                    for c in seg.origin_col..seg.origin_col + k {
                        counts[r * w + c] += 1;
                        for (ch, v) in fill.iter().enumerate() {
                            sums[(r * w + c) * channels + ch] += v;
                        }
                    }
                }
            }
            for r in 0..h {
                for c in 0..w {
                    let n = counts[r * w + c];
                    if n == 0 {
                        continue;
                    }
                    for ch in 0..channels {
                        let v = sums[(r * w + c) * channels + ch] / f64::from(n);
                        out.set(r, c, ch, v.clamp(0.0, 1.0));
                    }
                }
            }
        }
    }
    out
}

pub const SUMMARY_HEADER: &str =
    "file,n_segments,n_anomalous,anomaly_pixel_fraction,seg_ms,cluster_ms,block_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub n_segments: usize,
    pub n_anomalous: usize,
    pub anomaly_pixel_fraction: f64,
    pub timing: PhaseTiming,
    pub all_noise: bool,
    pub sanitized_path: PathBuf,
    pub mask_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchRow {
    pub file: String,
    pub result: std::result::Result<BatchStats, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    pub rows: Vec<BatchRow>,
    pub summary_path: PathBuf,
}

impl BatchSummary {
    pub fn failures(&self) -> impl Iterator<Item = &BatchRow> {
        self.rows.iter().filter(|r| r.result.is_err())
    }
}

fn ms(d: Duration) -> String {
    format!("{:.3}", d.as_secs_f64() * 1e3)
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn defend_file(path: &Path, cfg: &DefenseConfig, out_dir: &Path) -> Result<BatchStats> {
    let img = load_image(path)?;
    let outcome = defend(&img, cfg)?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let sanitized_path = out_dir.join(format!("{stem}_sanitized.png"));
    let mask_path = out_dir.join(format!("{stem}_mask.png"));
    save_image(&outcome.sanitized, &sanitized_path)?;
    save_mask(&outcome.anomaly_mask, &mask_path)?;
    Ok(BatchStats {
        n_segments: outcome.segment_count(),
        n_anomalous: outcome.anomalous_segment_indices.len(),
        anomaly_pixel_fraction: outcome.anomaly_pixel_fraction(),
        timing: outcome.timing,
        all_noise: outcome.all_noise,
        sanitized_path,
        mask_path,
    })
}

/// Defends every file, writing `<stem>_sanitized.png`, `<stem>_mask.png`
/// and `summary.csv` into `out_dir`. A failing file gets an `NA` row and
/// the batch continues; failure messages go to `failures.csv`.
pub fn defend_batch(paths: &[PathBuf], cfg: &DefenseConfig, out_dir: &Path) -> Result<BatchSummary> {
    cfg.validate()?;
    ensure_dir(out_dir)?;
    let rows: Vec<BatchRow> = paths
        .par_iter()
        .map(|p| {
            let result = defend_file(p, cfg, out_dir).map_err(|e| e.to_string());
            match &result {
                Ok(s) => info!(
                    "{}: {}/{} segments anomalous",
                    p.display(),
                    s.n_anomalous,
                    s.n_segments
                ),
                Err(e) => warn!("{}: {e}", p.display()),
            }
            BatchRow {
                file: file_label(p),
                result,
            }
        })
        .collect();

    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(SUMMARY_HEADER.split(','))?;
    for row in &rows {
        match &row.result {
            Ok(s) => wtr.write_record([
                row.file.clone(),
                s.n_segments.to_string(),
                s.n_anomalous.to_string(),
                format!("{:.6}", s.anomaly_pixel_fraction),
                ms(s.timing.segment),
                ms(s.timing.cluster),
                ms(s.timing.block),
            ])?,
            Err(_) => wtr.write_record([row.file.as_str(), "NA", "NA", "NA", "NA", "NA", "NA"])?,
        }
    }
    let bytes = wtr.into_inner().map_err(|e| Error::io(out_dir, e.into_error()))?;
    let summary_path = out_dir.join("summary.csv");
    write_atomic(&summary_path, &bytes)?;

    let failed: Vec<&BatchRow> = rows.iter().filter(|r| r.result.is_err()).collect();
    if !failed.is_empty() {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["file", "error"])?;
        for row in failed {
            wtr.write_record([row.file.as_str(), row.result.as_ref().unwrap_err()])?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::io(out_dir, e.into_error()))?;
        write_atomic(&out_dir.join("failures.csv"), &bytes)?;
    }

    Ok(BatchSummary { rows, summary_path })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MinPts;

    fn seg(vector: Vec<f64>) -> Segment {
        Segment {
            origin_row: 0,
            origin_col: 0,
            vector,
        }
    }

    #[test]
    fn constant_segment_unchanged() {
        let s = seg(vec![0.3; 12]);
        for mode in [Replacement::Min, Replacement::Mean, Replacement::Max] {
            assert_eq!(replace_segment(&s, 3, mode), s);
        }
    }

    #[test]
    fn gray_mean_of_zero_and_one() {
        let s = seg(vec![0.0, 1.0, 1.0, 0.0]);
        assert_eq!(replace_segment(&s, 1, Replacement::Mean).vector, vec![0.5; 4]);
        assert_eq!(replace_segment(&s, 1, Replacement::Min).vector, vec![0.0; 4]);
        assert_eq!(replace_segment(&s, 1, Replacement::Max).vector, vec![1.0; 4]);
    }

    #[test]
    fn rgb_channel_means() {
        // 2×2 RGB, pixels (r, g, b)
        let s = seg(vec![
            0.0, 0.25, 1.0, //
            0.5, 0.25, 1.0, //
            0.5, 0.75, 0.0, //
            1.0, 0.75, 0.0,
        ]);
        let out = replace_segment(&s, 3, Replacement::Mean);
        assert_eq!(out.vector, [0.5, 0.5, 0.5].repeat(4));
        let out = replace_segment(&s, 3, Replacement::Max);
        assert_eq!(out.vector, [1.0, 0.75, 1.0].repeat(4));
    }

    #[test]
    fn constant_image_is_untouched() {
        let img = Image::filled(64, 64, 3, 0.42).unwrap();
        let cfg = DefenseConfig {
            kernel: 16,
            stride: 8,
            eps: 1e-6,
            min_pts: MinPts::Fraction(0.6),
            ..DefenseConfig::default()
        };
        let out = defend(&img, &cfg).unwrap();
        assert!(out.anomalous_segment_indices.is_empty());
        assert_eq!(out.labels.cluster_count(), 1);
        assert_eq!(out.sanitized, img);
        assert!(out.anomaly_mask.is_empty());
        assert!(!out.all_noise);
    }

    #[test]
    fn impossible_min_pts_blocks_everything() {
        let img = Image::from_fn(48, 48, 1, |r, c, _| ((r * 7 + c * 3) % 11) as f64 / 10.0).unwrap();
        let cfg = DefenseConfig {
            kernel: 16,
            stride: 8,
            ..DefenseConfig::default()
        };
        let out = defend(&img, &cfg).unwrap();
        assert!(out.all_noise);
        assert_eq!(out.anomalous_segment_indices.len(), 25);
        assert_eq!(out.anomaly_mask.count_ones(), 48 * 48);
    }

    #[test]
    fn union_mode_averages_overlaps() {
        // two overlapping 2×2 windows on a 2×3 gray image, both anomalous
        let img = Image::new(2, 3, 1, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let grid = segment(&img, 2, 1).unwrap();
        let seq = block(&img, &grid, &[0, 1], Replacement::Mean, OverlapMode::Sequential);
        assert_eq!(seq.data(), &[0.0, 0.5, 0.5, 0.0, 0.5, 0.5]);
        let uni = block(&img, &grid, &[0, 1], Replacement::Mean, OverlapMode::Union);
        assert_eq!(uni.data(), &[0.0, 0.25, 0.5, 0.0, 0.25, 0.5]);
    }

    #[test]
    fn batch_handles_empty_and_bad_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DefenseConfig::default();
        let summary = defend_batch(&[], &cfg, dir.path()).unwrap();
        assert!(summary.rows.is_empty());
        assert_eq!(
            std::fs::read_to_string(&summary.summary_path).unwrap(),
            format!("{SUMMARY_HEADER}\n")
        );

        let good = dir.path().join("good.png");
        save_image(&Image::filled(48, 48, 3, 0.2).unwrap(), &good).unwrap();
        let cfg = DefenseConfig {
            kernel: 16,
            stride: 8,
            eps: 0.01,
            min_pts: MinPts::Fraction(0.6),
            ..DefenseConfig::default()
        };
        let out = dir.path().join("out");
        let summary =
            defend_batch(&[good, dir.path().join("missing.png")], &cfg, &out).unwrap();
        assert_eq!(summary.rows.len(), 2);
        assert!(summary.rows[0].result.is_ok());
        assert_eq!(summary.failures().count(), 1);
        let text = std::fs::read_to_string(&summary.summary_path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], SUMMARY_HEADER);
        assert!(lines[1].starts_with("good.png,25,0,0.000000,"));
        assert_eq!(lines[2], "missing.png,NA,NA,NA,NA,NA,NA");
        assert!(out.join("good_sanitized.png").exists());
        assert!(out.join("good_mask.png").exists());
        assert!(out.join("failures.csv").exists());
    }
}

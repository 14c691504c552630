//! Corpus evaluation: a clean pass and a patched pass per image, scored
//! against the injected ground truth.
//!
//! Outputs in `out_dir`:
//!
//! - `metrics.csv`: one row per image, `NA` where a metric is undefined or
//!   the image failed
//! - `aggregate.csv`: per-metric mean over the images where it is defined
//! - `manifest.json`: everything needed to rerun the evaluation
//! - `hist_clean.csv`, `hist_patched.csv`: Mahalanobis histograms for the
//!   first image of the corpus
//! - `failures.csv`: only when some image failed

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analyze::{export_histogram, fit_distribution, score_grid};
use crate::attack::{make_patch, PatchSpec};
use crate::config::DefenseConfig;
use crate::defense::defend_grid;
use crate::error::{Error, Result};
use crate::fsutil::{ensure_dir, write_atomic};
use crate::harness::calibrate::list_images;
use crate::harness::metrics::{score, DetectionMetrics};
use crate::image::{load_image, load_mask, PixelMask};
use crate::segment::segment;

pub const METRICS_HEADER: &str =
    "file,seg_precision,seg_recall,pixel_iou,patch_pixel_recall,clean_fp_rate";
pub const AGGREGATE_HEADER: &str = "metric,mean,images";
pub const DEFAULT_HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: DefenseConfig,
    /// Template for every injected patch; size and seed vary per image.
    pub patch: PatchSpec,
    /// Patch sides cycled over the sorted corpus.
    pub sizes: Vec<usize>,
    /// File names relative to the corpus directory, sorted.
    pub corpus: Vec<String>,
    pub seed: u64,
    pub histogram_bins: usize,
    pub tool_version: String,
}

impl RunManifest {
    /// Manifest over every PNG in `corpus_dir`.
    pub fn for_corpus(
        corpus_dir: &Path,
        config: DefenseConfig,
        patch: PatchSpec,
        sizes: Vec<usize>,
    ) -> Result<Self> {
        let corpus = list_images(corpus_dir)?
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect();
        Ok(Self {
            config,
            seed: patch.seed,
            patch,
            sizes,
            corpus,
            histogram_bins: DEFAULT_HISTOGRAM_BINS,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Patch spec for the `index`-th corpus image.
    pub fn patch_for(&self, index: usize) -> PatchSpec {
        let size = if self.sizes.is_empty() {
            self.patch.size
        } else {
            self.sizes[index % self.sizes.len()]
        };
        PatchSpec {
            size,
            seed: splitmix64(self.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            ..self.patch
        }
    }

    fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.histogram_bins < 2 {
            return Err(Error::InvalidParameter("histogram_bins must be >= 2".into()));
        }
        if self.sizes.contains(&0) || (self.sizes.is_empty() && self.patch.size == 0) {
            return Err(Error::InvalidParameter("patch sizes must be >= 1".into()));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEvaluation {
    pub clean: DetectionMetrics,
    pub patched: DetectionMetrics,
    pub patch_origin: (usize, usize),
    pub patch_size: usize,
    pub clean_all_noise: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRow {
    pub file: String,
    pub result: std::result::Result<ImageEvaluation, String>,
}

/// Means over the images where each metric is defined.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub segment_precision: Option<f64>,
    pub segment_recall: Option<f64>,
    pub pixel_iou: Option<f64>,
    pub patch_pixel_recall: Option<f64>,
    pub clean_fp_segment_rate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EvaluationSummary {
    pub rows: Vec<ImageRow>,
    pub aggregate: AggregateMetrics,
    pub manifest: RunManifest,
    pub metrics_path: PathBuf,
    pub aggregate_path: PathBuf,
    pub manifest_path: PathBuf,
}

impl EvaluationSummary {
    pub fn failures(&self) -> impl Iterator<Item = &ImageRow> {
        self.rows.iter().filter(|r| r.result.is_err())
    }
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let (sum, n) = values
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    ((n > 0).then(|| sum / n as f64), n)
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

fn evaluate_one(path: &Path, index: usize, manifest: &RunManifest) -> Result<ImageEvaluation> {
    let cfg = &manifest.config;
    let img = load_image(path)?;
    let grid = segment(&img, cfg.kernel, cfg.stride)?;
    let clean_out = defend_grid(&img, &grid, cfg)?;
    let empty = PixelMask::new(img.height(), img.width());
    let clean = score(&clean_out, &empty, &grid)?;

    let inj = make_patch(&manifest.patch_for(index), &img)?;
    let patched_grid = segment(&inj.image, cfg.kernel, cfg.stride)?;
    let patched_out = defend_grid(&inj.image, &patched_grid, cfg)?;
    let patched = score(&patched_out, &inj.mask, &patched_grid)?;
    Ok(ImageEvaluation {
        clean,
        patched,
        patch_origin: inj.origin,
        patch_size: inj.size,
        clean_all_noise: clean_out.all_noise,
    })
}

/// Defends an externally produced patched image and scores it against its
/// ground-truth mask (PNG or text matrix).
pub fn score_file(image: &Path, mask: &Path, cfg: &DefenseConfig) -> Result<DetectionMetrics> {
    let img = load_image(image)?;
    let truth = load_mask(mask)?;
    let grid = segment(&img, cfg.kernel, cfg.stride)?;
    let outcome = defend_grid(&img, &grid, cfg)?;
    score(&outcome, &truth, &grid)
}

/// Writes the Mahalanobis histograms of one image before and after patching.
fn write_histograms(path: &Path, manifest: &RunManifest, out_dir: &Path) -> Result<()> {
    let cfg = &manifest.config;
    let img = load_image(path)?;
    let inj = make_patch(&manifest.patch_for(0), &img)?;
    for (name, image) in [("hist_clean.csv", &img), ("hist_patched.csv", &inj.image)] {
        let grid = segment(image, cfg.kernel, cfg.stride)?;
        let dist = fit_distribution(&grid, cfg.shrinkage_lambda)?;
        let d = score_grid(&grid, &dist)?;
        export_histogram(&d, out_dir.join(name), manifest.histogram_bins)?;
    }
    Ok(())
}

pub fn evaluate(
    corpus_dir: &Path,
    cfg: &DefenseConfig,
    spec: &PatchSpec,
    sizes: &[usize],
    out_dir: &Path,
) -> Result<EvaluationSummary> {
    let manifest = RunManifest::for_corpus(corpus_dir, *cfg, *spec, sizes.to_vec())?;
    evaluate_manifest(&manifest, corpus_dir, out_dir)
}

/// Runs the evaluation described by `manifest`. Identical manifests and
/// corpora give byte-identical CSV files.
pub fn evaluate_manifest(
    manifest: &RunManifest,
    corpus_dir: &Path,
    out_dir: &Path,
) -> Result<EvaluationSummary> {
    manifest.validate()?;
    if manifest.corpus.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no PNG images in {}",
            corpus_dir.display()
        )));
    }
    ensure_dir(out_dir)?;

    let rows: Vec<ImageRow> = manifest
        .corpus
        .par_iter()
        .enumerate()
        .map(|(i, file)| {
            let result = evaluate_one(&corpus_dir.join(file), i, manifest).map_err(|e| e.to_string());
            if let Err(e) = &result {
                warn!("{file}: {e}");
            }
            ImageRow {
                file: file.clone(),
                result,
            }
        })
        .collect();

    let ok = || rows.iter().filter_map(|r| r.result.as_ref().ok());
    let (segment_precision, n_prec) = mean(ok().map(|e| e.patched.segment_precision));
    let (segment_recall, n_rec) = mean(ok().map(|e| e.patched.segment_recall));
    let (pixel_iou, n_iou) = mean(ok().map(|e| e.patched.pixel_iou));
    let (patch_pixel_recall, n_ppr) = mean(ok().map(|e| e.patched.patch_pixel_recall));
    let (clean_fp_segment_rate, n_fp) = mean(ok().map(|e| e.clean.clean_fp_segment_rate));
    let aggregate = AggregateMetrics {
        segment_precision,
        segment_recall,
        pixel_iou,
        patch_pixel_recall,
        clean_fp_segment_rate,
    };

    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(METRICS_HEADER.split(','))?;
    for row in &rows {
        match &row.result {
            Ok(e) => wtr.write_record([
                row.file.clone(),
                fmt_metric(e.patched.segment_precision),
                fmt_metric(e.patched.segment_recall),
                fmt_metric(e.patched.pixel_iou),
                fmt_metric(e.patched.patch_pixel_recall),
                fmt_metric(e.clean.clean_fp_segment_rate),
            ])?,
            Err(_) => wtr.write_record([row.file.as_str(), "NA", "NA", "NA", "NA", "NA"])?,
        }
    }
    let bytes = wtr.into_inner().map_err(|e| Error::io(out_dir, e.into_error()))?;
    let metrics_path = out_dir.join("metrics.csv");
    write_atomic(&metrics_path, &bytes)?;

    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(AGGREGATE_HEADER.split(','))?;
    for (name, value, n) in [
        ("seg_precision", segment_precision, n_prec),
        ("seg_recall", segment_recall, n_rec),
        ("pixel_iou", pixel_iou, n_iou),
        ("patch_pixel_recall", patch_pixel_recall, n_ppr),
        ("clean_fp_rate", clean_fp_segment_rate, n_fp),
    ] {
        wtr.write_record([name.to_string(), fmt_metric(value), n.to_string()])?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::io(out_dir, e.into_error()))?;
    let aggregate_path = out_dir.join("aggregate.csv");
    write_atomic(&aggregate_path, &bytes)?;

    let failed: Vec<&ImageRow> = rows.iter().filter(|r| r.result.is_err()).collect();
    if !failed.is_empty() {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["file", "error"])?;
        for row in failed {
            wtr.write_record([row.file.as_str(), row.result.as_ref().unwrap_err()])?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::io(out_dir, e.into_error()))?;
        write_atomic(&out_dir.join("failures.csv"), &bytes)?;
    }

    match rows.first() {
        Some(first) if first.result.is_ok() => {
            write_histograms(&corpus_dir.join(&first.file), manifest, out_dir)?
        }
        _ => warn!("first corpus image failed; no histograms written"),
    }

    let manifest_path = out_dir.join("manifest.json");
    write_atomic(&manifest_path, manifest.to_json()?.as_bytes())?;
    info!(
        "evaluated {} images: patch pixel recall {}, clean fp rate {}",
        rows.len(),
        fmt_metric(aggregate.patch_pixel_recall),
        fmt_metric(aggregate.clean_fp_segment_rate)
    );

    Ok(EvaluationSummary {
        rows,
        aggregate,
        manifest: manifest.clone(),
        metrics_path,
        aggregate_path,
        manifest_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{PatchKind, Placement};
    use crate::config::MinPts;
    use crate::image::{save_image, Image};

    fn small_cfg() -> DefenseConfig {
        DefenseConfig {
            kernel: 8,
            stride: 4,
            eps: 0.05,
            min_pts: MinPts::Fraction(0.6),
            ..DefenseConfig::default()
        }
    }

    #[test]
    fn constant_corpus_has_no_false_positives() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        fs::create_dir(&corpus).unwrap();
        for (i, v) in [0.2, 0.5, 0.8].iter().enumerate() {
            save_image(&Image::filled(40, 40, 3, *v).unwrap(), corpus.join(format!("c{i}.png"))).unwrap();
        }
        let spec = PatchSpec::new(12, Placement::Random, PatchKind::UniformNoise, 3);
        let out = dir.path().join("out");
        let summary = evaluate(&corpus, &small_cfg(), &spec, &[], &out).unwrap();
        assert_eq!(summary.aggregate.clean_fp_segment_rate, Some(0.0));
        assert_eq!(summary.rows.len(), 3);
        let text = fs::read_to_string(&summary.metrics_path).unwrap();
        assert!(text.starts_with(METRICS_HEADER));
        assert!(out.join("hist_clean.csv").exists());
        assert!(out.join("hist_patched.csv").exists());
        let reloaded = RunManifest::load(&summary.manifest_path).unwrap();
        assert_eq!(reloaded, summary.manifest);
    }

    #[test]
    fn failing_file_gets_na_row() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        fs::create_dir(&corpus).unwrap();
        save_image(&Image::filled(40, 40, 3, 0.5).unwrap(), corpus.join("a.png")).unwrap();
        fs::write(corpus.join("b.png"), b"not a png").unwrap();
        let spec = PatchSpec::new(12, Placement::Random, PatchKind::UniformNoise, 3);
        let out = dir.path().join("out");
        let summary = evaluate(&corpus, &small_cfg(), &spec, &[], &out).unwrap();
        assert_eq!(summary.failures().count(), 1);
        let text = fs::read_to_string(&summary.metrics_path).unwrap();
        assert!(text.lines().any(|l| l == "b.png,NA,NA,NA,NA,NA"));
        assert!(out.join("failures.csv").exists());
    }

    #[test]
    fn sizes_cycle_and_seeds_differ() {
        let m = RunManifest {
            config: small_cfg(),
            patch: PatchSpec::new(5, Placement::Random, PatchKind::UniformNoise, 1),
            sizes: vec![3, 4],
            corpus: vec![],
            seed: 1,
            histogram_bins: 10,
            tool_version: "x".into(),
        };
        assert_eq!(m.patch_for(0).size, 3);
        assert_eq!(m.patch_for(1).size, 4);
        assert_eq!(m.patch_for(2).size, 3);
        assert_ne!(m.patch_for(0).seed, m.patch_for(2).seed);
        assert_eq!(m.patch_for(7), m.patch_for(7));
    }

    #[test]
    fn external_pair() {
        let dir = tempfile::tempdir().unwrap();
        let host = Image::filled(32, 32, 3, 0.5).unwrap();
        let spec = PatchSpec::new(8, Placement::Fixed { row: 0, col: 0 }, PatchKind::Constant { value: 1.0 }, 0);
        let inj = make_patch(&spec, &host).unwrap();
        save_image(&inj.image, dir.path().join("p.png")).unwrap();
        crate::image::save_mask(&inj.mask, dir.path().join("m.png")).unwrap();
        let cfg = small_cfg();
        let m = score_file(&dir.path().join("p.png"), &dir.path().join("m.png"), &cfg).unwrap();
        assert_eq!(m.patch_pixel_recall, Some(1.0));
        assert_eq!(m.counts.flagged, 4);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let spec = PatchSpec::new(12, Placement::Random, PatchKind::UniformNoise, 3);
        assert!(evaluate(dir.path(), &small_cfg(), &spec, &[], &dir.path().join("o")).is_err());
    }
}

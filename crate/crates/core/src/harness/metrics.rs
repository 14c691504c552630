//! Segment- and pixel-level detection metrics against a ground-truth mask.

use serde::{Deserialize, Serialize};

use crate::defense::DefenseOutcome;
use crate::error::{Error, Result};
use crate::image::PixelMask;
use crate::segment::SegmentGrid;

/// A segment is ground-truth positive when at least this fraction of its
/// footprint lies on the truth mask.
pub const DEFAULT_OVERLAP_TAU: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SegmentCounts {
    pub total: usize,
    pub flagged: usize,
    pub positives: usize,
    pub true_positives: usize,
}

impl SegmentCounts {
    pub fn false_positives(&self) -> usize {
        self.flagged - self.true_positives
    }

    pub fn false_negatives(&self) -> usize {
        self.positives - self.true_positives
    }
}

/// `None` marks a metric that is not applicable: on a clean image (empty
/// truth) only `clean_fp_segment_rate` is defined, and on a patched image
/// every field except `clean_fp_segment_rate` is, as long as its
/// denominator is nonzero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub segment_precision: Option<f64>,
    pub segment_recall: Option<f64>,
    pub pixel_iou: Option<f64>,
    pub patch_pixel_recall: Option<f64>,
    pub clean_fp_segment_rate: Option<f64>,
    pub counts: SegmentCounts,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn score(outcome: &DefenseOutcome, truth: &PixelMask, grid: &SegmentGrid) -> Result<DetectionMetrics> {
    score_with_tau(outcome, truth, grid, DEFAULT_OVERLAP_TAU)
}

pub fn score_with_tau(
    outcome: &DefenseOutcome,
    truth: &PixelMask,
    grid: &SegmentGrid,
    tau: f64,
) -> Result<DetectionMetrics> {
    let (h, w, _) = grid.source_dims();
    if truth.height() != h || truth.width() != w {
        return Err(Error::DimensionMismatch(format!(
            "truth mask {}x{} vs image {h}x{w}",
            truth.height(),
            truth.width()
        )));
    }
    if outcome.labels.len() != grid.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels vs {} segments",
            outcome.labels.len(),
            grid.len()
        )));
    }
    let k = grid.kernel();
    let threshold = tau * (k * k) as f64;
    let positive: Vec<bool> = grid
        .segments()
        .iter()
        .map(|s| {
            let overlap = truth.count_in_square(s.origin_row, s.origin_col, k);
            overlap > 0 && overlap as f64 >= threshold
        })
        .collect();
    let flagged = &outcome.anomalous_segment_indices;
    let counts = SegmentCounts {
        total: grid.len(),
        flagged: flagged.len(),
        positives: positive.iter().filter(|p| **p).count(),
        true_positives: flagged.iter().filter(|i| positive[**i]).count(),
    };

    let truth_px = truth.count_ones();
    if truth_px == 0 {
        return Ok(DetectionMetrics {
            clean_fp_segment_rate: ratio(counts.flagged, counts.total),
            counts,
            ..DetectionMetrics::default()
        });
    }
    let inter = outcome.anomaly_mask.intersection_count(truth)?;
    let union = outcome.anomaly_mask.union_count(truth)?;
    Ok(DetectionMetrics {
        segment_precision: ratio(counts.true_positives, counts.flagged),
        segment_recall: ratio(counts.true_positives, counts.positives),
        pixel_iou: ratio(inter, union),
        patch_pixel_recall: ratio(inter, truth_px),
        clean_fp_segment_rate: None,
        counts,
    })
}

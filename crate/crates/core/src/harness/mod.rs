//! Corpus-level scoring, calibration and evaluation.

pub mod calibrate;
pub mod evaluate;
pub mod metrics;

pub use calibrate::{calibrate, calibrate_images, Calibration};
pub use evaluate::{evaluate, evaluate_manifest, score_file, EvaluationSummary, RunManifest, METRICS_HEADER};
pub use metrics::{score, DetectionMetrics, DEFAULT_OVERLAP_TAU};

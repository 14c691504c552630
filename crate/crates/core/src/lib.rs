//! Adversarial patch defense by density-based clustering of image segments.
//!
//! The pipeline has three phases:
//!
//! 1. **Segmenting** ([`segment`]): a `kernel`×`kernel` window slides over
//!    the image with a fixed stride and each window becomes a vector.
//! 2. **Isolating** ([`cluster`]): DBSCAN groups the segment vectors; the
//!    segments it labels Noise are treated as anomalous.
//! 3. **Blocking** ([`defense`]): every anomalous segment is overwritten
//!    with its own per-channel mean (or min/max).
//!
//! [`analyze`] scores segments by Mahalanobis distance, [`attack`] injects
//! synthetic and distribution-constrained patches, and [`harness`] runs
//! corpus-level calibration and evaluation.

pub mod analyze;
pub mod attack;
pub mod cluster;
pub mod config;
pub mod defense;
pub mod error;
mod fsutil;
pub mod harness;
pub mod image;
pub mod linalg;
pub mod segment;
pub mod synth;

pub use crate::analyze::{
    fit_distribution, mahalanobis, modality_report, DistanceReport, Modality, SegmentDistribution,
};
pub use crate::attack::{make_adaptive_patch, make_patch, AdaptiveBounds, Injection, PatchKind, PatchSpec, Placement};
pub use crate::cluster::{dbscan, distance, extract_noise, region_query, ClusterLabels, ClusterParams, Label, Metric};
pub use crate::config::{DefenseConfig, MinPts, OverlapMode, Replacement};
pub use crate::defense::{defend, defend_batch, replace_segment, DefenseOutcome};
pub use crate::error::{Error, Result};
pub use crate::image::{apply_mask_compose, load_image, save_image, Image, PixelMask};
pub use crate::segment::{segment, Segment, SegmentGrid};

//! Synthetic patch injection with ground-truth masks.
//!
//! Patches are statistical stand-ins for trained adversarial patches:
//! high-variance noise for the plain attack, and a field whose per-channel
//! mean and spread are pinned close to the host's for the adaptive attack.

use std::fmt;
use std::str::FromStr;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{apply_mask_compose, Image, PixelMask};

/// Patch sides used by the evaluation corpus.
pub const PATCH_SIZES: [usize; 5] = [38, 41, 44, 47, 50];

/// Tolerance on the adaptive statistics after clamping.
pub const ADAPTIVE_TOLERANCE: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Fixed { row: usize, col: usize },
    /// Uniform over all positions where the patch fits, drawn from the spec seed.
    Random,
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Placement::Fixed { row, col } => write!(f, "fixed:{row},{col}"),
            Placement::Random => f.write_str("random"),
        }
    }
}

impl FromStr for Placement {
    type Err = Error;

    /// `random`, `top-left`, or `fixed:<row>,<col>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "random" => return Ok(Placement::Random),
            "top-left" | "topleft" => return Ok(Placement::Fixed { row: 0, col: 0 }),
            _ => {}
        }
        let bad = || Error::InvalidParameter(format!("placement {s:?}, expected random or fixed:<row>,<col>"));
        let rest = s.strip_prefix("fixed:").ok_or_else(bad)?;
        let (r, c) = rest.split_once(',').ok_or_else(bad)?;
        Ok(Placement::Fixed {
            row: r.trim().parse().map_err(|_| bad())?,
            col: c.trim().parse().map_err(|_| bad())?,
        })
    }
}

/// Where the adaptive patch draws its spatial pattern from before the
/// per-channel affine rescale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseField {
    /// A patch-sized region copied from a random location of the host.
    HostSample,
    /// The host content under the patch itself.
    #[default]
    HostInPlace,
    /// I.i.d. uniform noise.
    Uniform,
}

impl FromStr for BaseField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "host-sample" => Ok(BaseField::HostSample),
            "host-in-place" => Ok(BaseField::HostInPlace),
            "uniform" => Ok(BaseField::Uniform),
            other => Err(Error::InvalidParameter(format!("unknown base field {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveBounds {
    pub mean_diff_low: f64,
    pub mean_diff_high: f64,
    pub std_ratio_low: f64,
    pub std_ratio_high: f64,
    pub n_fragments: usize,
    pub fragment_size: usize,
    #[serde(default)]
    pub base: BaseField,
    /// Position of the targeted statistics inside each interval, from 0
    /// (lower bound) to 1 (upper bound).
    #[serde(default = "default_aim")]
    pub aim: f64,
}

fn default_aim() -> f64 {
    0.5
}

impl Default for AdaptiveBounds {
    fn default() -> Self {
        Self {
            mean_diff_low: 0.02,
            mean_diff_high: 0.08,
            std_ratio_low: 1.5,
            std_ratio_high: 2.4,
            n_fragments: 20,
            fragment_size: crate::config::DEFAULT_KERNEL,
            base: BaseField::HostInPlace,
            aim: default_aim(),
        }
    }
}

impl AdaptiveBounds {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 <= self.mean_diff_low
            && self.mean_diff_low <= self.mean_diff_high
            && 0.0 <= self.std_ratio_low
            && self.std_ratio_low <= self.std_ratio_high
            && self.n_fragments >= 1
            && self.fragment_size >= 1
            && (0.0..=1.0).contains(&self.aim);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid adaptive bounds {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchKind {
    UniformNoise,
    /// Noise modulated by a one-pixel checkerboard: bright cells in
    /// `[0.5, 1]`, dark cells in `[0, 0.5]`.
    HighFrequency,
    Constant { value: f64 },
    AdaptiveConstrained(AdaptiveBounds),
}

impl fmt::Display for PatchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatchKind::UniformNoise => f.write_str("uniform"),
            PatchKind::HighFrequency => f.write_str("high-frequency"),
            PatchKind::Constant { value } => write!(f, "constant:{value}"),
            PatchKind::AdaptiveConstrained(_) => f.write_str("adaptive"),
        }
    }
}

impl FromStr for PatchKind {
    type Err = Error;

    /// `uniform`, `high-frequency`, `constant:<v>` or `adaptive` (default bounds).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "uniform" | "uniform_noise" | "uniform-noise" => Ok(PatchKind::UniformNoise),
            "high-frequency" | "high_frequency" => Ok(PatchKind::HighFrequency),
            "adaptive" | "adaptive_constrained" => {
                Ok(PatchKind::AdaptiveConstrained(AdaptiveBounds::default()))
            }
            _ => {
                let v = s
                    .strip_prefix("constant:")
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .filter(|v| (0.0..=1.0).contains(v))
                    .ok_or_else(|| Error::InvalidParameter(format!("unknown patch kind {s:?}")))?;
                Ok(PatchKind::Constant { value: v })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub size: usize,
    pub placement: Placement,
    pub kind: PatchKind,
    pub seed: u64,
}

impl PatchSpec {
    pub fn new(size: usize, placement: Placement, kind: PatchKind, seed: u64) -> Self {
        Self {
            size,
            placement,
            kind,
            seed,
        }
    }
}

/// Per-channel statistics of an adaptive patch against the host fragments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelCheck {
    pub fragment_mean: f64,
    pub fragment_std: f64,
    pub patch_mean: f64,
    pub patch_std: f64,
}

impl ChannelCheck {
    pub fn mean_diff(&self) -> f64 {
        (self.patch_mean - self.fragment_mean).abs()
    }

    pub fn std_ratio(&self) -> f64 {
        self.patch_std / self.fragment_std
    }

    /// Both statistics inside their bounds, widened by `tol` (the spread
    /// bound is widened in absolute std units).
    pub fn within(&self, b: &AdaptiveBounds, tol: f64) -> bool {
        let diff = self.mean_diff();
        diff >= b.mean_diff_low - tol
            && diff <= b.mean_diff_high + tol
            && self.patch_std >= b.std_ratio_low * self.fragment_std - tol
            && self.patch_std <= b.std_ratio_high * self.fragment_std + tol
    }
}

#[derive(Debug, Clone)]
pub struct Injection {
    pub image: Image,
    pub mask: PixelMask,
    pub origin: (usize, usize),
    pub size: usize,
    /// Present for adaptive patches.
    pub checks: Option<Vec<ChannelCheck>>,
}

fn place(spec: &PatchSpec, host: &Image, rng: &mut ChaCha8Rng) -> Result<(usize, usize)> {
    let (h, w) = (host.height(), host.width());
    let out_of_bounds = |row, col| Error::PatchOutOfBounds {
        size: spec.size,
        row,
        col,
        height: h,
        width: w,
    };
    if spec.size == 0 || spec.size > h || spec.size > w {
        return Err(out_of_bounds(0, 0));
    }
    match spec.placement {
        Placement::Fixed { row, col } => {
            if row + spec.size > h || col + spec.size > w {
                Err(out_of_bounds(row, col))
            } else {
                Ok((row, col))
            }
        }
        Placement::Random => Ok((
            rng.random_range(0..=h - spec.size),
            rng.random_range(0..=w - spec.size),
        )),
    }
}

/// Composes `content` (patch-local, `size`×`size`×channels) into `host`.
fn compose(
    host: &Image,
    origin: (usize, usize),
    size: usize,
    content: &[f64],
) -> Result<(Image, PixelMask)> {
    let channels = host.channels();
    let (row, col) = origin;
    let canvas = Image::from_fn(host.height(), host.width(), channels, |r, c, ch| {
        if r >= row && r < row + size && c >= col && c < col + size {
            content[((r - row) * size + (c - col)) * channels + ch]
        } else {
            host.get(r, c, ch)
        }
    })?;
    let mask = PixelMask::square(host.height(), host.width(), row, col, size);
    let image = apply_mask_compose(host, &canvas, &mask)?;
    Ok((image, mask))
}

/// Injects a patch of `spec.kind`. Adaptive kinds delegate to
/// [`make_adaptive_patch`].
pub fn make_patch(spec: &PatchSpec, host: &Image) -> Result<Injection> {
    if let PatchKind::AdaptiveConstrained(bounds) = spec.kind {
        return make_adaptive_patch(host, &bounds, spec);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let origin = place(spec, host, &mut rng)?;
    let channels = host.channels();
    let n = spec.size * spec.size * channels;
    let content: Vec<f64> = match spec.kind {
        PatchKind::UniformNoise => (0..n).map(|_| rng.random::<f64>()).collect(),
        PatchKind::HighFrequency => (0..n)
            .map(|i| {
                let pixel = i / channels;
                let (r, c) = (pixel / spec.size, pixel % spec.size);
                let u: f64 = rng.random();
                if (r + c) % 2 == 0 {
                    0.5 + 0.5 * u
                } else {
                    0.5 - 0.5 * u
                }
            })
            .collect(),
        PatchKind::Constant { value } => {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidParameter(format!(
                    "constant patch value {value} outside [0, 1]"
                )));
            }
            vec![value; n]
        }
        PatchKind::AdaptiveConstrained(_) => unreachable!("handled above"),
    };
    let (image, mask) = compose(host, origin, spec.size, &content)?;
    Ok(Injection {
        image,
        mask,
        origin,
        size: spec.size,
        checks: None,
    })
}

fn channel_stats(content: &[f64], channels: usize, ch: usize) -> (f64, f64) {
    let values = content.iter().skip(ch).step_by(channels);
    let n = (content.len() / channels) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Generates a patch whose per-channel mean differs from the average
/// fragment mean by `[mean_diff_low, mean_diff_high]` and whose standard
/// deviation is `[std_ratio_low, std_ratio_high]` times the average fragment
/// standard deviation. Fragments are `n_fragments` random
/// `fragment_size`×`fragment_size` windows of the clean host.
///
/// The base field is standardized per channel, rescaled toward the targets
/// picked by `aim` inside each interval, clamped to `[0, 1]`, and
/// re-adjusted until the clamped statistics settle. The result is verified independently; a patch that
/// misses a bound by more than [`ADAPTIVE_TOLERANCE`] is an error.
pub fn make_adaptive_patch(host: &Image, bounds: &AdaptiveBounds, spec: &PatchSpec) -> Result<Injection> {
    bounds.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let origin = place(spec, host, &mut rng)?;
    let (h, w, channels) = (host.height(), host.width(), host.channels());
    let size = spec.size;

    let frag = bounds.fragment_size.min(h).min(w);
    let mut frag_mean = vec![0.0; channels];
    let mut frag_std = vec![0.0; channels];
    for _ in 0..bounds.n_fragments {
        let r = rng.random_range(0..=h - frag);
        let c = rng.random_range(0..=w - frag);
        for (ch, (m, s)) in host.window_stats(r, c, frag).into_iter().enumerate() {
            frag_mean[ch] += m / bounds.n_fragments as f64;
            frag_std[ch] += s / bounds.n_fragments as f64;
        }
    }

    let n = size * size * channels;
    let mut base: Vec<f64> = match bounds.base {
        BaseField::HostSample => {
            let r0 = rng.random_range(0..=h - size);
            let c0 = rng.random_range(0..=w - size);
            (0..n)
                .map(|i| {
                    let (pixel, ch) = (i / channels, i % channels);
                    host.get(r0 + pixel / size, c0 + pixel % size, ch)
                })
                .collect()
        }
        BaseField::HostInPlace => (0..n)
            .map(|i| {
                let (pixel, ch) = (i / channels, i % channels);
                host.get(origin.0 + pixel / size, origin.1 + pixel % size, ch)
            })
            .collect(),
        BaseField::Uniform => (0..n).map(|_| rng.random::<f64>()).collect(),
    };

    let lerp = |lo: f64, hi: f64| lo + bounds.aim * (hi - lo);
    let target_diff = lerp(bounds.mean_diff_low, bounds.mean_diff_high);
    let target_ratio = lerp(bounds.std_ratio_low, bounds.std_ratio_high);
    let mut content = vec![0.0; n];
    let mut checks = Vec::with_capacity(channels);
    for ch in 0..channels {
        if !(frag_std[ch] > 0.0) {
            return Err(Error::ConstraintsUnreachable(format!(
                "channel {ch}: host fragments have zero spread, the std ratio is undefined"
            )));
        }
        let (mut base_mean, mut base_std) = channel_stats(&base, channels, ch);
        if !(base_std > 1e-12) {
            // flat sampled region: fall back to noise for this channel
            for v in base.iter_mut().skip(ch).step_by(channels) {
                *v = rng.random::<f64>();
            }
            (base_mean, base_std) = channel_stats(&base, channels, ch);
        }
        // move the mean toward the side with more headroom
        let sign = if frag_mean[ch] <= 0.5 { 1.0 } else { -1.0 };
        let want_mean = frag_mean[ch] + sign * target_diff;
        let want_std = target_ratio * frag_std[ch];

        let (mut offset, mut scale) = (want_mean, want_std);
        for _ in 0..100 {
            for (out, b) in content
                .iter_mut()
                .skip(ch)
                .step_by(channels)
                .zip(base.iter().skip(ch).step_by(channels))
            {
                *out = (offset + scale * (b - base_mean) / base_std).clamp(0.0, 1.0);
            }
            let (m, s) = channel_stats(&content, channels, ch);
            if (m - want_mean).abs() < 1e-6 && (s - want_std).abs() < 1e-6 {
                break;
            }
            offset += want_mean - m;
            if s > 0.0 {
                scale *= want_std / s;
            }
        }

        let (patch_mean, patch_std) = channel_stats(&content, channels, ch);
        let check = ChannelCheck {
            fragment_mean: frag_mean[ch],
            fragment_std: frag_std[ch],
            patch_mean,
            patch_std,
        };
        debug!("adaptive channel {ch}: {check:?}");
        if !check.within(bounds, ADAPTIVE_TOLERANCE) {
            return Err(Error::ConstraintsUnreachable(format!(
                "channel {ch}: mean diff {:.4}, std {:.4} vs fragment std {:.4} after clamping",
                check.mean_diff(),
                check.patch_std,
                check.fragment_std
            )));
        }
        checks.push(check);
    }

    let (image, mask) = compose(host, origin, size, &content)?;
    Ok(Injection {
        image,
        mask,
        origin,
        size,
        checks: Some(checks),
    })
}

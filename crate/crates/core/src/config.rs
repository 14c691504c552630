//! Defense configuration and its flat `key = value` file format.
//!
//! ```text
//! # comments start with '#'
//! kernel = 40
//! stride = 8
//! eps = 0.4
//! min_pts = rho:0.6
//! replacement = mean
//! distance_kind = rms
//! shrinkage_lambda = 0.1
//! overlap = sequential
//! ```

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterParams, Metric};
use crate::error::{Error, Result};

pub const DEFAULT_KERNEL: usize = 40;
pub const DEFAULT_STRIDE: usize = 8;
pub const DEFAULT_EPS: f64 = 0.4;
pub const DEFAULT_MIN_PTS: usize = 1201;
pub const DEFAULT_RHO: f64 = 0.6;

/// DBSCAN density threshold, either literal or a fraction of the segment count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MinPts {
    Absolute(usize),
    Fraction(f64),
}

impl MinPts {
    /// Concrete threshold for `n` points: `⌈ρ·n⌉` in fraction mode, at least 1.
    pub fn resolve(self, n: usize) -> usize {
        match self {
            MinPts::Absolute(m) => m,
            // small slack so that e.g. 0.6·5 = 3.0000000000000004 resolves to 3
            MinPts::Fraction(rho) => ((rho * n as f64 - 1e-9).ceil() as usize).max(1),
        }
    }

    fn validate(self) -> Result<()> {
        match self {
            MinPts::Absolute(0) => Err(Error::InvalidParameter("min_pts must be >= 1".into())),
            MinPts::Fraction(rho) if !(rho > 0.0 && rho <= 1.0) => Err(Error::InvalidParameter(
                format!("min_pts fraction must lie in (0, 1], got {rho}"),
            )),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for MinPts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MinPts::Absolute(m) => write!(f, "{m}"),
            MinPts::Fraction(rho) => write!(f, "rho:{rho}"),
        }
    }
}

impl FromStr for MinPts {
    type Err = Error;

    /// Accepts `1201`, `rho:0.6` or `ρ:0.6`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let frac = s
            .strip_prefix("rho:")
            .or_else(|| s.strip_prefix("ρ:"))
            .or_else(|| s.strip_prefix("RHO:"));
        let parsed = match frac {
            Some(v) => v
                .trim()
                .parse::<f64>()
                .map(MinPts::Fraction)
                .map_err(|e| Error::InvalidParameter(format!("min_pts fraction {v:?}: {e}")))?,
            None => s
                .parse::<usize>()
                .map(MinPts::Absolute)
                .map_err(|e| Error::InvalidParameter(format!("min_pts {s:?}: {e}")))?,
        };
        parsed.validate()?;
        Ok(parsed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Replacement {
    Min,
    #[default]
    Mean,
    Max,
}

impl fmt::Display for Replacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Replacement::Min => "min",
            Replacement::Mean => "mean",
            Replacement::Max => "max",
        })
    }
}

impl FromStr for Replacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "min" => Ok(Replacement::Min),
            "mean" => Ok(Replacement::Mean),
            "max" => Ok(Replacement::Max),
            other => Err(Error::InvalidParameter(format!("unknown replacement {other:?}"))),
        }
    }
}

/// How overlapping anomalous segments are written back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapMode {
    /// Ascending segment order; later writes overwrite earlier ones.
    #[default]
    Sequential,
    /// Each masked pixel takes the mean of the fill values of every
    /// anomalous segment covering it.
    Union,
}

impl fmt::Display for OverlapMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OverlapMode::Sequential => "sequential",
            OverlapMode::Union => "union",
        })
    }
}

impl FromStr for OverlapMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sequential" => Ok(OverlapMode::Sequential),
            "union" => Ok(OverlapMode::Union),
            other => Err(Error::InvalidParameter(format!("unknown overlap mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefenseConfig {
    pub kernel: usize,
    pub stride: usize,
    pub eps: f64,
    pub min_pts: MinPts,
    pub replacement: Replacement,
    pub distance_kind: Metric,
    /// Covariance shrinkage for the Mahalanobis analyzer.
    pub shrinkage_lambda: f64,
    pub overlap: OverlapMode,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            kernel: DEFAULT_KERNEL,
            stride: DEFAULT_STRIDE,
            eps: DEFAULT_EPS,
            min_pts: MinPts::Absolute(DEFAULT_MIN_PTS),
            replacement: Replacement::Mean,
            distance_kind: Metric::Rms,
            shrinkage_lambda: crate::analyze::DEFAULT_SHRINKAGE,
            overlap: OverlapMode::Sequential,
        }
    }
}

impl DefenseConfig {
    /// Defaults with `min_pts = ⌈0.6·n⌉`.
    pub fn calibrated(eps: f64) -> Self {
        Self {
            eps,
            min_pts: MinPts::Fraction(DEFAULT_RHO),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 {
            return Err(Error::InvalidParameter("kernel must be >= 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::InvalidParameter("stride must be >= 1".into()));
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::InvalidParameter(format!("eps must be > 0, got {}", self.eps)));
        }
        if !(0.0..=1.0).contains(&self.shrinkage_lambda) {
            return Err(Error::InvalidParameter(format!(
                "shrinkage_lambda must lie in [0, 1], got {}",
                self.shrinkage_lambda
            )));
        }
        self.min_pts.validate()
    }

    /// Clustering parameters for an image with `n` segments.
    pub fn cluster_params(&self, n: usize) -> ClusterParams {
        ClusterParams {
            eps: self.eps,
            min_pts: self.min_pts.resolve(n),
            metric: self.distance_kind,
        }
    }

    /// Sets one field from its textual key and value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().to_ascii_lowercase().replace('-', "_");
        let value = value.trim();
        let bad = |e: &dyn fmt::Display| Error::InvalidParameter(format!("{key} = {value:?}: {e}"));
        match key.as_str() {
            "kernel" => self.kernel = value.parse().map_err(|e| bad(&e))?,
            "stride" => self.stride = value.parse().map_err(|e| bad(&e))?,
            "eps" => self.eps = value.parse().map_err(|e| bad(&e))?,
            "min_pts" | "minpts" => self.min_pts = value.parse()?,
            "replacement" => self.replacement = value.parse()?,
            "distance_kind" | "distance" => self.distance_kind = value.parse()?,
            "shrinkage_lambda" | "lambda" => {
                self.shrinkage_lambda = value.parse().map_err(|e| bad(&e))?
            }
            "overlap" => self.overlap = value.parse()?,
            _ => return Err(Error::InvalidParameter(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            cfg.set(key, value).map_err(|e| Error::Config {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        format!(
            "kernel = {}\nstride = {}\neps = {}\nmin_pts = {}\nreplacement = {}\n\
             distance_kind = {}\nshrinkage_lambda = {}\noverlap = {}\n",
            self.kernel,
            self.stride,
            self.eps,
            self.min_pts,
            self.replacement,
            self.distance_kind,
            self.shrinkage_lambda,
            self.overlap
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_defaults() {
        let cfg = DefenseConfig::default();
        assert_eq!((cfg.kernel, cfg.stride), (40, 8));
        assert_eq!(cfg.eps, 0.4);
        assert_eq!(cfg.min_pts, MinPts::Absolute(1201));
        assert_eq!(cfg.replacement, Replacement::Mean);
    }

    #[test]
    fn min_pts_forms() {
        assert_eq!("1201".parse::<MinPts>().unwrap(), MinPts::Absolute(1201));
        assert_eq!("ρ:0.6".parse::<MinPts>().unwrap(), MinPts::Fraction(0.6));
        assert_eq!("rho:0.6".parse::<MinPts>().unwrap().resolve(576), 346);
        assert_eq!(MinPts::Fraction(0.6).resolve(5), 3);
        assert_eq!(MinPts::Fraction(0.001).resolve(5), 1);
        assert!("rho:1.5".parse::<MinPts>().is_err());
        assert!("0".parse::<MinPts>().is_err());
        assert!("lots".parse::<MinPts>().is_err());
    }

    #[test]
    fn text_round_trip() {
        let cfg = DefenseConfig {
            eps: 0.0123,
            min_pts: MinPts::Fraction(0.6),
            replacement: Replacement::Max,
            distance_kind: Metric::Cosine,
            overlap: OverlapMode::Union,
            ..DefenseConfig::default()
        };
        assert_eq!(DefenseConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn parse_errors_carry_line() {
        let err = DefenseConfig::parse("kernel = 40\n\nstride 8\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 3, .. }));
        let err = DefenseConfig::parse("# hi\nwidth = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
        assert!(DefenseConfig::parse("eps = -1\n").is_err());
        let cfg = DefenseConfig::parse("min-pts = rho:0.5  # inline\n").unwrap();
        assert_eq!(cfg.min_pts, MinPts::Fraction(0.5));
    }
}

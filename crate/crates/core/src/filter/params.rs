use std::fmt;
use std::str::FromStr;

use crate::raster::ClassLegend;
use crate::{Error, Result};

/// Smallest per-class height bandwidth, metres.
pub const MIN_SIGMA_H: f64 = 0.05;

/// How the weighted sum is normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Divide by the sum of weights. Keeps every value inside the range of
    /// the values it averages.
    #[default]
    WeightSum,
    /// Divide by window pixel count times number of dates.
    LiteralNT,
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weight-sum" => Ok(Normalization::WeightSum),
            "literal-nt" => Ok(Normalization::LiteralNT),
            other => Err(Error::InvalidParameter(format!(
                "unknown normalization '{other}' (expected weight-sum or literal-nt)"
            ))),
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::WeightSum => "weight-sum",
            Normalization::LiteralNT => "literal-nt",
        })
    }
}

/// Whether neighbour weights are precomputed once or recomputed every
/// iteration. Both produce bit-identical results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightMode {
    /// Cache when the table fits in [`WEIGHT_CACHE_BUDGET`] bytes.
    #[default]
    Auto,
    OnTheFly,
    Cached,
}

impl FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(WeightMode::Auto),
            "on-the-fly" => Ok(WeightMode::OnTheFly),
            "cached" => Ok(WeightMode::Cached),
            other => Err(Error::InvalidParameter(format!(
                "unknown weight mode '{other}' (expected auto, on-the-fly or cached)"
            ))),
        }
    }
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightMode::Auto => "auto",
            WeightMode::OnTheFly => "on-the-fly",
            WeightMode::Cached => "cached",
        })
    }
}

pub const WEIGHT_CACHE_BUDGET: usize = 512 << 20;

/// Per-class height bandwidth sigma_h, metres.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassBandwidthTable {
    sigma_h: Vec<f64>,
}

impl ClassBandwidthTable {
    /// Values below [`MIN_SIGMA_H`] are raised to it; non-positive or
    /// non-finite values are rejected.
    pub fn new(sigma_h: Vec<f64>) -> Result<Self> {
        if sigma_h.is_empty() {
            return Err(Error::InvalidParameter("empty bandwidth table".into()));
        }
        if let Some((c, v)) = sigma_h
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::InvalidParameter(format!(
                "sigma_h for class {c} must be positive and finite, got {v}"
            )));
        }
        Ok(ClassBandwidthTable {
            sigma_h: sigma_h.into_iter().map(|v| v.max(MIN_SIGMA_H)).collect(),
        })
    }

    pub fn uniform(classes: usize, sigma_h: f64) -> Result<Self> {
        ClassBandwidthTable::new(vec![sigma_h; classes])
    }

    pub fn len(&self) -> usize {
        self.sigma_h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma_h.is_empty()
    }

    pub fn sigma_h(&self, class: usize) -> f64 {
        self.sigma_h[class]
    }

    pub fn values(&self) -> &[f64] {
        &self.sigma_h
    }

    /// `class_id sigma_h [name]` per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut tok = line.split_whitespace();
            let bad = || Error::Format(format!("bandwidth line {}: '{line}'", lineno + 1));
            let id: usize = tok.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let sigma: f64 = tok.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            entries.push((id, sigma));
        }
        entries.sort_by_key(|e| e.0);
        for (expected, (id, _)) in entries.iter().enumerate() {
            if *id != expected {
                return Err(Error::Format(format!(
                    "bandwidth ids must be dense from 0, missing {expected}"
                )));
            }
        }
        ClassBandwidthTable::new(entries.into_iter().map(|e| e.1).collect())
    }

    pub fn to_text(&self, legend: Option<&ClassLegend>) -> String {
        self.sigma_h
            .iter()
            .enumerate()
            .map(|(c, s)| match legend {
                Some(l) => format!("{c} {s} {}\n", l.name(c)),
                None => format!("{c} {s}\n"),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterParams {
    /// Half window size in pixels; 2 gives a 5x5 window.
    pub window_radius: usize,
    /// Spatial bandwidth, pixels.
    pub sigma_s: f64,
    /// Spectral bandwidth, CIELAB distance units.
    pub sigma_r: f64,
    pub bandwidths: ClassBandwidthTable,
    /// Mean relative change below which iteration stops.
    pub convergence_tau: f64,
    pub max_iterations: usize,
    pub normalization: Normalization,
    /// Rescale each pixel's class probabilities to sum to 1 after every iteration.
    pub renormalize: bool,
    /// Guard in the relative-change denominator.
    pub epsilon: f64,
    pub weight_mode: WeightMode,
}

pub const DEFAULT_WINDOW_RADIUS: usize = 2;
pub const DEFAULT_SIGMA_S: f64 = 3.0;
pub const DEFAULT_SIGMA_R: f64 = 5.0;
pub const DEFAULT_TAU: f64 = 0.05;
pub const DEFAULT_MAX_ITERATIONS: usize = 20;
pub const DEFAULT_EPSILON: f64 = 1e-9;

impl FilterParams {
    pub fn new(bandwidths: ClassBandwidthTable) -> Self {
        FilterParams {
            window_radius: DEFAULT_WINDOW_RADIUS,
            sigma_s: DEFAULT_SIGMA_S,
            sigma_r: DEFAULT_SIGMA_R,
            bandwidths,
            convergence_tau: DEFAULT_TAU,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            normalization: Normalization::WeightSum,
            renormalize: false,
            epsilon: DEFAULT_EPSILON,
            weight_mode: WeightMode::Auto,
        }
    }

    /// Window side length squared.
    pub fn window_pixels(&self) -> usize {
        let side = 2 * self.window_radius + 1;
        side * side
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.window_radius < 1 {
            errors.push(format!("window_radius must be >= 1, got {}", self.window_radius));
        }
        if !(self.sigma_s.is_finite() && self.sigma_s > 0.0) {
            errors.push(format!("sigma_s must be > 0, got {}", self.sigma_s));
        }
        if !(self.sigma_r.is_finite() && self.sigma_r > 0.0) {
            errors.push(format!("sigma_r must be > 0, got {}", self.sigma_r));
        }
        if !(self.convergence_tau > 0.0 && self.convergence_tau < 1.0) {
            errors.push(format!("tau must be in (0, 1), got {}", self.convergence_tau));
        }
        if self.max_iterations < 1 {
            errors.push("max_iterations must be >= 1".into());
        }
        if !(self.epsilon > 0.0) {
            errors.push(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(errors.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandwidth_floor_and_rejection() {
        let t = ClassBandwidthTable::new(vec![3.5, 0.01]).unwrap();
        assert_eq!(t.values(), &[3.5, MIN_SIGMA_H]);
        assert!(ClassBandwidthTable::new(vec![0.0]).is_err());
        assert!(ClassBandwidthTable::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn bandwidth_text_round_trip() {
        let t = ClassBandwidthTable::new(vec![5.98, 0.53, 4.449999999]).unwrap();
        let legend = ClassLegend::new(vec!["buildings".into(), "ground".into(), "trees".into()]).unwrap();
        assert_eq!(ClassBandwidthTable::parse(&t.to_text(Some(&legend))).unwrap(), t);
        assert_eq!(ClassBandwidthTable::parse(&t.to_text(None)).unwrap(), t);
        assert!(ClassBandwidthTable::parse("1 2.0\n").is_err());
    }

    #[test]
    fn defaults_and_validation() {
        let p = FilterParams::new(ClassBandwidthTable::uniform(2, 1.0).unwrap());
        assert_eq!(p.window_pixels(), 25);
        assert!(p.validate().is_ok());
        let mut bad = p.clone();
        bad.sigma_s = -1.0;
        bad.convergence_tau = 1.5;
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("sigma_s") && msg.contains("tau"), "{msg}");
        assert_eq!("literal-nt".parse::<Normalization>().unwrap(), Normalization::LiteralNT);
        assert!("nt".parse::<Normalization>().is_err());
    }
}

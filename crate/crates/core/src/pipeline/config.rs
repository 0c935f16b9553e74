//! Flat `key = value` pipeline configuration.
//!
//! Relative paths resolve against the directory of the config file. Unknown
//! keys are errors, and every problem found is reported at once.

use std::path::{Path, PathBuf};

use crate::filter::{
    ClassBandwidthTable, FilterParams, Normalization, WeightMode, DEFAULT_EPSILON, DEFAULT_MAX_ITERATIONS,
    DEFAULT_SIGMA_R, DEFAULT_SIGMA_S, DEFAULT_TAU, DEFAULT_WINDOW_RADIUS,
};
use crate::preprocess::{CoregistrationParams, DEFAULT_OUTLIER_THRESHOLD, DEFAULT_SE_RADIUS};
use crate::propagation::PropagationThresholds;
use crate::{Error, Result};

pub const WORKERS_ENV: &str = "STPR_WORKERS";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub stack: Option<PathBuf>,
    pub probs: Option<PathBuf>,
    pub legend: Option<PathBuf>,
    /// Truth rasters, one per date, for evaluation.
    pub truth: Vec<PathBuf>,
    /// Precomputed sigma_h table; estimated from training labels when unset.
    pub bandwidths: Option<PathBuf>,
    pub target_cell_size: Option<f64>,
    pub coregister: bool,
    pub outlier_threshold: f64,
    pub coregister_max_iter: usize,
    pub compute_ndsm: bool,
    pub se_radius: usize,
    pub propagate_labels: bool,
    pub ndsm_threshold: f64,
    pub ndvi_threshold: f64,
    pub robust_bandwidths: bool,
    pub window_radius: usize,
    pub sigma_s: f64,
    pub sigma_r: f64,
    pub tau: f64,
    pub max_iterations: usize,
    pub normalization: Normalization,
    pub renormalize: bool,
    pub epsilon: f64,
    pub weight_mode: WeightMode,
    pub out_dir: PathBuf,
    pub keep_history: bool,
    /// 0 picks the default thread count.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stack: None,
            probs: None,
            legend: None,
            truth: Vec::new(),
            bandwidths: None,
            target_cell_size: None,
            coregister: true,
            outlier_threshold: DEFAULT_OUTLIER_THRESHOLD,
            coregister_max_iter: crate::preprocess::DEFAULT_MAX_ITERATIONS,
            compute_ndsm: true,
            se_radius: DEFAULT_SE_RADIUS,
            propagate_labels: false,
            ndsm_threshold: PropagationThresholds::default().max_ndsm_diff,
            ndvi_threshold: PropagationThresholds::default().max_ndvi_diff,
            robust_bandwidths: false,
            window_radius: DEFAULT_WINDOW_RADIUS,
            sigma_s: DEFAULT_SIGMA_S,
            sigma_r: DEFAULT_SIGMA_R,
            tau: DEFAULT_TAU,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            normalization: Normalization::WeightSum,
            renormalize: false,
            epsilon: DEFAULT_EPSILON,
            weight_mode: WeightMode::Auto,
            out_dir: PathBuf::from("stpr-out"),
            keep_history: false,
            workers: 0,
        }
    }
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got '{v}'")),
    }
}

impl PipelineConfig {
    /// Parses config text; relative paths are joined onto `base`. Range and
    /// path checks are left to [`PipelineConfig::validate`].
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = PipelineConfig {
            out_dir: base.join("stpr-out"),
            ..PipelineConfig::default()
        };
        let mut errors = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errors.push(format!("line {}: expected key = value", lineno + 1));
                continue;
            };
            if let Err(e) = cfg.set(key.trim(), value.trim(), base) {
                errors.push(format!("line {}: {e}", lineno + 1));
            }
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors))
        }
    }

    fn set(&mut self, key: &str, v: &str, base: &Path) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("{key}: bad value '{v}'"))
        }
        let path = |v: &str| base.join(v);
        match key {
            "stack" => self.stack = Some(path(v)),
            "probs" => self.probs = Some(path(v)),
            "legend" => self.legend = Some(path(v)),
            "truth" => self.truth = v.split_whitespace().map(path).collect(),
            "bandwidths" => self.bandwidths = Some(path(v)),
            "target_cell_size" => self.target_cell_size = Some(num(key, v)?),
            "coregister" => self.coregister = parse_bool(v).map_err(|e| format!("{key}: {e}"))?,
            "outlier_threshold" => self.outlier_threshold = num(key, v)?,
            "coregister_max_iter" => self.coregister_max_iter = num(key, v)?,
            "compute_ndsm" => self.compute_ndsm = parse_bool(v).map_err(|e| format!("{key}: {e}"))?,
            "se_radius" => self.se_radius = num(key, v)?,
            "propagate_labels" => self.propagate_labels = parse_bool(v).map_err(|e| format!("{key}: {e}"))?,
            "ndsm_threshold" => self.ndsm_threshold = num(key, v)?,
            "ndvi_threshold" => self.ndvi_threshold = num(key, v)?,
            "robust_bandwidths" => self.robust_bandwidths = parse_bool(v).map_err(|e| format!("{key}: {e}"))?,
            "window" => self.window_radius = num(key, v)?,
            "sigma_s" => self.sigma_s = num(key, v)?,
            "sigma_r" => self.sigma_r = num(key, v)?,
            "tau" => self.tau = num(key, v)?,
            "max_iter" => self.max_iterations = num(key, v)?,
            "norm" => self.normalization = v.parse().map_err(|e: Error| format!("{key}: {e}"))?,
            "renormalize" => self.renormalize = parse_bool(v).map_err(|e| format!("{key}: {e}"))?,
            "epsilon" => self.epsilon = num(key, v)?,
            "weight_mode" => self.weight_mode = v.parse().map_err(|e: Error| format!("{key}: {e}"))?,
            "out_dir" => self.out_dir = path(v),
            "keep_history" => self.keep_history = parse_bool(v).map_err(|e| format!("{key}: {e}"))?,
            "workers" => self.workers = num(key, v)?,
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// All range and existence problems, or nothing.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let mut need = |name: &str, p: &Option<PathBuf>, required: bool| match p {
            None if required => errors.push(format!("{name}: required")),
            Some(p) if !p.exists() => errors.push(format!("{name}: {} does not exist", p.display())),
            _ => {}
        };
        need("stack", &self.stack, true);
        need("probs", &self.probs, true);
        need("legend", &self.legend, false);
        need("bandwidths", &self.bandwidths, false);
        for p in &self.truth {
            if !p.exists() {
                errors.push(format!("truth: {} does not exist", p.display()));
            }
        }
        if let Some(c) = self.target_cell_size {
            if !(c > 0.0 && c.is_finite()) {
                errors.push(format!("target_cell_size: must be > 0, got {c}"));
            }
        }
        if !(self.outlier_threshold > 0.0) {
            errors.push(format!("outlier_threshold: must be > 0, got {}", self.outlier_threshold));
        }
        if self.coregister_max_iter == 0 {
            errors.push("coregister_max_iter: must be >= 1".into());
        }
        if self.se_radius == 0 {
            errors.push("se_radius: must be >= 1".into());
        }
        if PropagationThresholds::new(self.ndsm_threshold, self.ndvi_threshold).is_err() {
            errors.push("ndsm_threshold, ndvi_threshold: must be >= 0".into());
        }
        let probe = self.filter_params(ClassBandwidthTable::uniform(1, 1.0)?);
        if let Err(Error::InvalidParameter(msg)) = probe.validate() {
            errors.extend(msg.split("; ").map(str::to_string));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn filter_params(&self, bandwidths: ClassBandwidthTable) -> FilterParams {
        FilterParams {
            window_radius: self.window_radius,
            sigma_s: self.sigma_s,
            sigma_r: self.sigma_r,
            bandwidths,
            convergence_tau: self.tau,
            max_iterations: self.max_iterations,
            normalization: self.normalization,
            renormalize: self.renormalize,
            epsilon: self.epsilon,
            weight_mode: self.weight_mode,
        }
    }

    pub fn coregistration_params(&self) -> CoregistrationParams {
        CoregistrationParams {
            outlier_threshold: self.outlier_threshold,
            max_iterations: self.coregister_max_iter,
        }
    }

    pub fn propagation_thresholds(&self) -> Result<PropagationThresholds> {
        PropagationThresholds::new(self.ndsm_threshold, self.ndvi_threshold)
    }

    /// Worker count after the environment override.
    pub fn effective_workers(&self) -> Result<usize> {
        match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(vec![format!("{WORKERS_ENV}: bad value '{v}'")])),
            Err(_) => Ok(self.workers),
        }
    }

    /// Normalized text with absolute paths; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        for (k, p) in [
            ("stack", &self.stack),
            ("probs", &self.probs),
            ("legend", &self.legend),
            ("bandwidths", &self.bandwidths),
        ] {
            if let Some(p) = p {
                kv(k, p.display().to_string());
            }
        }
        if !self.truth.is_empty() {
            kv(
                "truth",
                self.truth.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(" "),
            );
        }
        if let Some(c) = self.target_cell_size {
            kv("target_cell_size", c.to_string());
        }
        kv("coregister", self.coregister.to_string());
        kv("outlier_threshold", self.outlier_threshold.to_string());
        kv("coregister_max_iter", self.coregister_max_iter.to_string());
        kv("compute_ndsm", self.compute_ndsm.to_string());
        kv("se_radius", self.se_radius.to_string());
        kv("propagate_labels", self.propagate_labels.to_string());
        kv("ndsm_threshold", self.ndsm_threshold.to_string());
        kv("ndvi_threshold", self.ndvi_threshold.to_string());
        kv("robust_bandwidths", self.robust_bandwidths.to_string());
        kv("window", self.window_radius.to_string());
        kv("sigma_s", self.sigma_s.to_string());
        kv("sigma_r", self.sigma_r.to_string());
        kv("tau", self.tau.to_string());
        kv("max_iter", self.max_iterations.to_string());
        kv("norm", self.normalization.to_string());
        kv("renormalize", self.renormalize.to_string());
        kv("epsilon", self.epsilon.to_string());
        kv("weight_mode", self.weight_mode.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv("keep_history", self.keep_history.to_string());
        kv("workers", self.workers.to_string());
        out
    }
}

/// Reads, parses and validates a config file.
pub fn validate_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let cfg = PipelineConfig::parse(&text, base)?;
    cfg.validate()?;
    Ok(cfg)
}

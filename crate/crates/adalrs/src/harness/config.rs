//! Flat `key = value` run configuration with dotted section keys.
//!
//! UTF-8 text, `#` starts a comment (full-line or trailing), unknown keys are
//! rejected with the offending key named. CLI flags override file keys.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::AdaLrsConfig;
use crate::error::HarnessError;
use crate::oracle::{MlpOracle, NoiseMode, OptimizerKind, QuadraticOracle};
use crate::sched::{ScheduleConfig, ScheduleKind};

/// Which trainable problem to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    Quadratic,
    Mlp,
}

/// Oracle construction parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub kind: OracleKind,
    pub curvature: f64,
    pub dim: usize,
    pub noise_std: f64,
    pub noise_mode: NoiseMode,
    /// Initial parameter-vector norm for the quadratic problem.
    pub init_norm: f64,
    /// Overrides the run seed for the oracle alone when set.
    pub seed: Option<u64>,
    pub mlp_sizes: Vec<usize>,
    pub mlp_samples: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub momentum_coeff: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            kind: OracleKind::Quadratic,
            curvature: 100.0,
            dim: 1,
            noise_std: 0.0,
            noise_mode: NoiseMode::Absolute,
            init_norm: 1.0,
            seed: None,
            mlp_sizes: vec![8, 16, 1],
            mlp_samples: 512,
            batch_size: 32,
            optimizer: OptimizerKind::Sgd,
            momentum_coeff: 0.9,
        }
    }
}

/// Everything a single run needs. The seed fully determines the run given
/// the rest of the config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scheduler: ScheduleConfig,
    /// Search configuration; absent means a baseline run with scale fixed at 1.
    pub adalrs: Option<AdaLrsConfig>,
    pub oracle: OracleConfig,
    pub seed: u64,
    /// Where run artifacts go; the CLI `--out` flag overrides this.
    pub output_dir: Option<String>,
    /// When set, the report embeds a band verdict against this optimum.
    pub eta_star: Option<f64>,
    /// Additive slack used for the band verdict.
    pub band_slack: f64,
}

impl RunConfig {
    pub fn oracle_seed(&self) -> u64 {
        self.oracle.seed.unwrap_or(self.seed)
    }
}

/// One of the two concrete oracles, built from an [`OracleConfig`].
pub enum AnyOracle {
    Quadratic(QuadraticOracle),
    Mlp(MlpOracle),
}

impl OracleConfig {
    pub fn build(&self, seed: u64) -> Result<AnyOracle, HarnessError> {
        let seed = self.seed.unwrap_or(seed);
        match self.kind {
            OracleKind::Quadratic => Ok(AnyOracle::Quadratic(QuadraticOracle::new(
                self.curvature,
                self.dim,
                self.init_norm,
                self.noise_std,
                self.noise_mode,
                self.optimizer,
                self.momentum_coeff,
                seed,
            )?)),
            OracleKind::Mlp => Ok(AnyOracle::Mlp(MlpOracle::new(
                &self.mlp_sizes,
                self.mlp_samples,
                self.batch_size,
                self.optimizer,
                self.momentum_coeff,
                seed,
            )?)),
        }
    }
}

/// Raw key/value view of a config source, before typing.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut values = BTreeMap::new();
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::config(
                    format!("line {}", lineno + 1),
                    format!("expected `key = value`, got `{line}`"),
                )
            })?;
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(RawConfig { values })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    /// CLI-style overrides: later values win.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn into_run_config(self) -> Result<RunConfig, HarnessError> {
        let mut b = TypedReader {
            values: self.values,
            used: Vec::new(),
        };

        let sched_kind = match b.string("scheduler.kind", "constant")?.as_str() {
            "constant" => ScheduleKind::Constant,
            "cosine" => ScheduleKind::Cosine,
            "wsd" => ScheduleKind::Wsd,
            other => {
                return Err(HarnessError::config(
                    "scheduler.kind",
                    format!("unknown scheduler `{other}` (constant|cosine|wsd)"),
                ))
            }
        };
        let scheduler = ScheduleConfig {
            kind: sched_kind,
            base_lr: b.float("scheduler.base_lr", 1e-3)?,
            total_steps: b.integer("scheduler.total_steps", 10_000)?,
            min_lr_ratio: b.float("scheduler.min_lr_ratio", 0.0)?,
            wsd_decay_fraction: b.float("scheduler.wsd_decay_fraction", 0.1)?,
        };
        scheduler
            .validate()
            .map_err(|e| HarnessError::config("scheduler", e.to_string()))?;

        let defaults = AdaLrsConfig::default();
        let adalrs = if b.boolean("adalrs.enabled", false)? {
            let cfg = AdaLrsConfig {
                upscale_factor: b.float("adalrs.alpha", defaults.upscale_factor)?,
                downscale_factor: b.float("adalrs.beta", defaults.downscale_factor)?,
                decay_factor: b.float("adalrs.lambda", defaults.decay_factor)?,
                window_len: b.integer("adalrs.window_k", defaults.window_len as u64)? as usize,
                initial_threshold: b.float("adalrs.theta0", defaults.initial_threshold)?,
                search_start_ratio: b
                    .float("adalrs.search_start_ratio", defaults.search_start_ratio)?,
                search_end_ratio: b.float("adalrs.search_end_ratio", defaults.search_end_ratio)?,
                error_multiplier: b.float("adalrs.error_multiplier", defaults.error_multiplier)?,
                backtracking: b.boolean("adalrs.backtracking", defaults.backtracking)?,
                comparable_gap_threshold: b.float(
                    "adalrs.comparable_gap_threshold",
                    defaults.comparable_gap_threshold,
                )?,
            };
            cfg.validate()
                .map_err(|e| HarnessError::config("adalrs", e.to_string()))?;
            Some(cfg)
        } else {
            None
        };

        let odefaults = OracleConfig::default();
        let oracle_kind = match b.string("oracle.kind", "quadratic")?.as_str() {
            "quadratic" => OracleKind::Quadratic,
            "mlp" => OracleKind::Mlp,
            other => {
                return Err(HarnessError::config(
                    "oracle.kind",
                    format!("unknown oracle `{other}` (quadratic|mlp)"),
                ))
            }
        };
        let noise_mode = match b.string("oracle.noise_mode", "absolute")?.as_str() {
            "absolute" => NoiseMode::Absolute,
            "relative" => NoiseMode::Relative,
            other => {
                return Err(HarnessError::config(
                    "oracle.noise_mode",
                    format!("unknown noise mode `{other}` (absolute|relative)"),
                ))
            }
        };
        let optimizer = match b.string("oracle.optimizer", "sgd")?.as_str() {
            "sgd" => OptimizerKind::Sgd,
            "momentum" => OptimizerKind::Momentum,
            other => {
                return Err(HarnessError::config(
                    "oracle.optimizer",
                    format!("unknown optimizer `{other}` (sgd|momentum)"),
                ))
            }
        };
        let oracle = OracleConfig {
            kind: oracle_kind,
            curvature: b.float("oracle.curvature", odefaults.curvature)?,
            dim: b.integer("oracle.dim", odefaults.dim as u64)? as usize,
            noise_std: b.float("oracle.noise_std", odefaults.noise_std)?,
            noise_mode,
            init_norm: b.float("oracle.init_norm", odefaults.init_norm)?,
            seed: b.optional_integer("oracle.seed")?,
            mlp_sizes: b.integer_list("oracle.mlp_sizes", &odefaults.mlp_sizes)?,
            mlp_samples: b.integer("oracle.mlp_samples", odefaults.mlp_samples as u64)? as usize,
            batch_size: b.integer("oracle.batch_size", odefaults.batch_size as u64)? as usize,
            optimizer,
            momentum_coeff: b.float("oracle.momentum_coeff", odefaults.momentum_coeff)?,
        };

        let cfg = RunConfig {
            scheduler,
            adalrs,
            oracle,
            seed: b.integer("seed", 0)?,
            output_dir: b.take("output_dir"),
            eta_star: b.optional_float("eta_star")?,
            band_slack: b.float("band_slack", 0.0)?,
        };
        b.reject_unknown()?;
        Ok(cfg)
    }
}

struct TypedReader {
    values: BTreeMap<String, String>,
    used: Vec<String>,
}

impl TypedReader {
    fn take(&mut self, key: &str) -> Option<String> {
        self.used.push(key.to_string());
        self.values.get(key).cloned()
    }

    fn string(&mut self, key: &str, default: &str) -> Result<String, HarnessError> {
        Ok(self.take(key).unwrap_or_else(|| default.to_string()))
    }

    fn float(&mut self, key: &str, default: f64) -> Result<f64, HarnessError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| HarnessError::config(key, format!("`{v}` is not a number"))),
        }
    }

    fn optional_float(&mut self, key: &str) -> Result<Option<f64>, HarnessError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| HarnessError::config(key, format!("`{v}` is not a number"))),
        }
    }

    fn integer(&mut self, key: &str, default: u64) -> Result<u64, HarnessError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| HarnessError::config(key, format!("`{v}` is not an integer"))),
        }
    }

    fn optional_integer(&mut self, key: &str) -> Result<Option<u64>, HarnessError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| HarnessError::config(key, format!("`{v}` is not an integer"))),
        }
    }

    fn boolean(&mut self, key: &str, default: bool) -> Result<bool, HarnessError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => match v.as_str() {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(HarnessError::config(key, format!("`{v}` is not a boolean"))),
            },
        }
    }

    fn integer_list(&mut self, key: &str, default: &[usize]) -> Result<Vec<usize>, HarnessError> {
        match self.take(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| HarnessError::config(key, format!("`{s}` is not an integer")))
                })
                .collect(),
        }
    }

    fn reject_unknown(self) -> Result<(), HarnessError> {
        for key in self.values.keys() {
            if !self.used.contains(key) {
                return Err(HarnessError::config(key.clone(), "unknown key"));
            }
        }
        Ok(())
    }
}

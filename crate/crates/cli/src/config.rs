//! Flat TOML training configuration. Unknown keys are rejected.
//!
//! ```toml
//! seed = 0
//! dataset = "blobs"            # blobs | csv
//! blobs_samples = 4000
//! blobs_classes = 4
//! blobs_std = 1.0
//! # dataset_path = "train.csv" # required for dataset = "csv"
//! hidden_units = [32, 32]
//! batch_norm = "traditional"   # none | traditional | multiplierless
//! weight_quant = "free:4"      # none | free:K | pow2:K | pruned:K:ratio | pruned-pow2:K:ratio
//!                              # | binary | ternary | uniform:bits
//! act_quant = "none"           # none | fp | pow2
//! act_bits = 8
//! learning_rate = 0.01
//! momentum = 0.9
//! epochs = 10
//! batch_size = 32
//! kmeans_interval_batches = 1
//! kmeans_steps = 1
//! # init_model = "float.lutq"  # start from a trained model
//! ```

use std::path::{Path, PathBuf};

use lutq_core::nn::{BnMode, Dataset, TrainConfig};
use lutq_core::quant::{QuantScheme, QuantizerConfig};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

/// Environment variable that overrides `seed`.
pub const SEED_ENV: &str = "LUTQ_SEED";

fn default_samples() -> usize {
    4000
}
fn default_classes() -> usize {
    4
}
fn default_std() -> f64 {
    1.0
}
fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}
fn default_none() -> String {
    "none".into()
}
fn default_act_bits() -> u32 {
    8
}
fn default_lr() -> f64 {
    0.05
}
fn default_momentum() -> f64 {
    0.9
}
fn default_epochs() -> usize {
    10
}
fn default_batch() -> usize {
    32
}
fn default_one() -> usize {
    1
}
fn default_dataset() -> String {
    "blobs".into()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dataset")]
    pub dataset: String,
    #[serde(default)]
    pub dataset_path: Option<PathBuf>,
    #[serde(default = "default_samples")]
    pub blobs_samples: usize,
    #[serde(default = "default_classes")]
    pub blobs_classes: usize,
    #[serde(default = "default_std")]
    pub blobs_std: f64,
    #[serde(default = "default_hidden")]
    pub hidden_units: Vec<usize>,
    #[serde(default = "default_none")]
    pub batch_norm: String,
    #[serde(default = "default_none")]
    pub weight_quant: String,
    #[serde(default = "default_none")]
    pub act_quant: String,
    #[serde(default = "default_act_bits")]
    pub act_bits: u32,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_one")]
    pub kmeans_interval_batches: usize,
    #[serde(default = "default_one")]
    pub kmeans_steps: usize,
    #[serde(default)]
    pub init_model: Option<PathBuf>,
}

fn field(name: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{name}: {msg}"))
}

/// Parses a weight quantization spec such as `free:4` or `pruned:4:0.5`.
/// `none` yields `None`.
pub fn parse_weight_quant(s: &str) -> Result<Option<QuantizerConfig>, String> {
    let parts: Vec<&str> = s.trim().split(':').collect();
    let num = |i: usize| -> Result<usize, String> {
        parts
            .get(i)
            .ok_or_else(|| format!("{s:?} is missing a number"))?
            .parse::<usize>()
            .map_err(|e| format!("{s:?}: {e}"))
    };
    let ratio = || -> Result<f64, String> {
        parts
            .get(2)
            .ok_or_else(|| format!("{s:?} is missing the pruning ratio"))?
            .parse::<f64>()
            .map_err(|e| format!("{s:?}: {e}"))
    };
    let arity = |n: usize| {
        if parts.len() == n {
            Ok(())
        } else {
            Err(format!("{s:?} has {} fields, expected {n}", parts.len()))
        }
    };
    let cfg = match parts[0] {
        "none" | "float" => {
            arity(1)?;
            return Ok(None);
        }
        "free" => {
            arity(2)?;
            QuantizerConfig::free(num(1)?)
        }
        "pow2" => {
            arity(2)?;
            QuantizerConfig::pow2(num(1)?)
        }
        "pruned" | "pruned-pow2" => {
            arity(3)?;
            QuantizerConfig::new(QuantScheme::Pruned {
                k: num(1)?,
                ratio: ratio()?,
                pow2: parts[0] == "pruned-pow2",
            })
        }
        "binary" => {
            arity(1)?;
            QuantizerConfig::binary()
        }
        "ternary" => {
            arity(1)?;
            QuantizerConfig::ternary()
        }
        "uniform" => {
            arity(2)?;
            QuantizerConfig::new(QuantScheme::Uniform {
                n_bits: num(1)? as u32,
                delta: None,
            })
        }
        other => return Err(format!("unknown scheme {other:?}")),
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(Some(cfg))
}

pub fn parse_bn(s: &str) -> Result<Option<BnMode>, String> {
    match s {
        "none" => Ok(None),
        "traditional" => Ok(Some(BnMode::Traditional)),
        "multiplierless" | "multiplier-less" => Ok(Some(BnMode::MultiplierLess)),
        _ => Err(format!("expected none, traditional or multiplierless, got {s:?}")),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads and validates a config file, applying the seed override.
    /// Relative paths inside the file resolve against its directory.
    pub fn load(path: &Path, seed_override: Option<&str>) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| field("config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(s) = seed_override {
            cfg.seed = s.trim().parse().map_err(|_| field(SEED_ENV, format!("{s:?} is not an integer")))?;
        }
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.dataset_path, &mut cfg.init_model].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        match self.dataset.as_str() {
            "blobs" => {
                if self.blobs_samples == 0 || self.blobs_classes == 0 || !(self.blobs_std > 0.0) {
                    return Err(field("blobs_samples", "blob settings must be positive"));
                }
            }
            "csv" => match &self.dataset_path {
                None => return Err(field("dataset_path", "required when dataset = \"csv\"")),
                Some(p) if !p.is_file() => {
                    return Err(field("dataset_path", format!("{} does not exist", p.display())))
                }
                Some(_) => {}
            },
            other => return Err(field("dataset", format!("expected blobs or csv, got {other:?}"))),
        }
        if let Some(p) = &self.init_model {
            if !p.is_file() {
                return Err(field("init_model", format!("{} does not exist", p.display())));
            }
        }
        if self.hidden_units.contains(&0) {
            return Err(field("hidden_units", "layer widths must be positive"));
        }
        parse_bn(&self.batch_norm).map_err(|e| field("batch_norm", e))?;
        parse_weight_quant(&self.weight_quant).map_err(|e| field("weight_quant", e))?;
        match self.act_quant.as_str() {
            "none" | "fp" | "pow2" => {}
            other => return Err(field("act_quant", format!("expected none, fp or pow2, got {other:?}"))),
        }
        if !(1..=31).contains(&self.act_bits) {
            return Err(field("act_bits", "must lie in 1..=31"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(field("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(field("momentum", "must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(field("batch_size", "must be >= 1"));
        }
        if self.kmeans_interval_batches == 0 {
            return Err(field("kmeans_interval_batches", "must be >= 1"));
        }
        if self.kmeans_steps == 0 {
            return Err(field("kmeans_steps", "must be >= 1"));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            epochs: self.epochs,
            batch_size: self.batch_size,
            kmeans_interval: self.kmeans_interval_batches,
            kmeans_steps: self.kmeans_steps,
            seed: self.seed,
        }
    }

    pub fn dataset(&self) -> CliResult<Dataset> {
        match &self.dataset_path {
            Some(p) if self.dataset == "csv" => Dataset::from_csv(p).map_err(|e| field("dataset_path", e)),
            _ => Ok(Dataset::blobs(self.seed, self.blobs_samples, self.blobs_classes, self.blobs_std)?),
        }
    }
}

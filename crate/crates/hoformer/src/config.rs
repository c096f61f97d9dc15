//! Flat `key=value` run configuration shared by the CLI commands. Unknown
//! keys are errors; model and optimizer keys are delegated to their owning
//! modules.

use crate::data::LabelThresholds;
use crate::model::{ModelConfig, ModelError};
use crate::train::{GridSpec, TrainConfig, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl From<ModelError> for ConfigError {
    fn from(e: ModelError) -> Self {
        ConfigError(e.to_string())
    }
}

impl From<TrainError> for ConfigError {
    fn from(e: TrainError) -> Self {
        ConfigError(e.to_string())
    }
}

/// Everything a training-style command needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub thresholds: LabelThresholds,
    pub ratios: (f64, f64, f64),
    pub window: usize,
    pub grid: GridSpec,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            thresholds: LabelThresholds::default(),
            ratios: (0.7, 0.1, 0.2),
            window: 5,
            grid: GridSpec::default(),
            workers: 1,
        }
    }
}

fn parse_list<T: std::str::FromStr>(value: &str, key: &str) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| ConfigError(format!("bad list entry `{s}` for {key}")))
        })
        .collect()
}

impl RunConfig {
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |k: &str, v: &str| ConfigError(format!("bad value `{v}` for {k}"));
        match key {
            "label_positive" => {
                self.thresholds.positive = value.parse().map_err(|_| bad(key, value))?
            }
            "label_negative" => {
                self.thresholds.negative = value.parse().map_err(|_| bad(key, value))?
            }
            "split_train" => self.ratios.0 = value.parse().map_err(|_| bad(key, value))?,
            "split_val" => self.ratios.1 = value.parse().map_err(|_| bad(key, value))?,
            "split_test" => self.ratios.2 = value.parse().map_err(|_| bad(key, value))?,
            "window" => self.window = value.parse().map_err(|_| bad(key, value))?,
            "workers" => self.workers = value.parse().map_err(|_| bad(key, value))?,
            "grid_hidden" => self.grid.hidden = parse_list(value, key)?,
            "grid_heads" => self.grid.heads = parse_list(value, key)?,
            "grid_blocks" => self.grid.blocks = parse_list(value, key)?,
            "grid_dropout" => self.grid.dropout = parse_list(value, key)?,
            _ => {
                // try the model namespace first, then the optimizer's
                if self.model.apply_kv(key, value).is_ok() {
                    return Ok(());
                }
                self.train
                    .apply_kv(key, value)
                    .map_err(|_| ConfigError(format!("unknown key `{key}`")))?;
            }
        }
        Ok(())
    }

    /// Parse a flat key=value file body.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected key=value", idx + 1)))?;
            cfg.apply_kv(key.trim(), value.trim())?;
        }
        cfg.model.validate()?;
        Ok(cfg)
    }
}

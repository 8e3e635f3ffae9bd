//! Flat key-value configuration files and the resolved application config.
//!
//! Files hold one `key = value` pair per line; `#` starts a comment line and
//! blank lines are skipped. Unknown and repeated keys are rejected with the
//! offending line number.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curriculum::{Strategy, TrainConfig};
use crate::decode::DecodeConfig;
use crate::error::{Error, Result};
use crate::optim::AdamConfig;
use crate::prompt;

/// Every tunable in one place: training, decoding, and corpus handling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppConfig {
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    /// Embedding and hidden dimension.
    pub dim: usize,
    /// Hearst pattern used for prompts.
    pub pattern: usize,
    /// Minimum token frequency for the vocabulary.
    pub min_freq: usize,
}

impl Default for AppConfig {
    fn default() -> AppConfig {
        AppConfig {
            train: TrainConfig {
                strategy: Strategy::Ft,
                lambda0: 0.5,
                mu: 2.0,
                epochs: 12,
                inner_steps: 40,
                batch_size: 16,
                seed: 42,
                pcl_stage_epochs: None,
                adam: AdamConfig::default(),
                threads: 1,
            },
            decode: DecodeConfig::default(),
            dim: 32,
            pattern: 0,
            min_freq: 1,
        }
    }
}

pub const CONFIG_KEYS: [&str; 19] = [
    "strategy",
    "lambda0",
    "mu",
    "epochs",
    "inner_steps",
    "batch_size",
    "seed",
    "threads",
    "pcl_stage_epochs",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "beam",
    "tau",
    "max_len",
    "dim",
    "pattern",
    "min_freq",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Config(format!(
            "line {line}: invalid value {value:?} for key {key:?}"
        ))
    })
}

impl AppConfig {
    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        match key {
            "strategy" => {
                self.train.strategy = value
                    .parse()
                    .map_err(|e| Error::Config(format!("line {line}: {e}")))?
            }
            "lambda0" => self.train.lambda0 = parse_value(key, value, line)?,
            "mu" => self.train.mu = parse_value(key, value, line)?,
            "epochs" => self.train.epochs = parse_value(key, value, line)?,
            "inner_steps" => self.train.inner_steps = parse_value(key, value, line)?,
            "batch_size" => self.train.batch_size = parse_value(key, value, line)?,
            "seed" => self.train.seed = parse_value(key, value, line)?,
            "threads" => self.train.threads = parse_value(key, value, line)?,
            "pcl_stage_epochs" => {
                self.train.pcl_stage_epochs = Some(parse_value(key, value, line)?)
            }
            "lr" => self.train.adam.lr = parse_value(key, value, line)?,
            "beta1" => self.train.adam.beta1 = parse_value(key, value, line)?,
            "beta2" => self.train.adam.beta2 = parse_value(key, value, line)?,
            "eps" => self.train.adam.eps = parse_value(key, value, line)?,
            "beam" => self.decode.beam = parse_value(key, value, line)?,
            "tau" => self.decode.tau = parse_value(key, value, line)?,
            "max_len" => self.decode.max_len = parse_value(key, value, line)?,
            "dim" => self.dim = parse_value(key, value, line)?,
            "pattern" => self.pattern = parse_value(key, value, line)?,
            "min_freq" => self.min_freq = parse_value(key, value, line)?,
            other => {
                return Err(Error::Config(format!(
                    "line {line}: unknown key {other:?}"
                )))
            }
        }
        Ok(())
    }

    /// Parses a config file's text over the defaults.
    pub fn parse(text: &str) -> Result<AppConfig> {
        let mut cfg = AppConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {line}: expected key = value, got {trimmed:?}"))
            })?;
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config(format!("line {line}: repeated key {key:?}")));
            }
            seen.push(key.to_string());
            cfg.set(key, value, line)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<AppConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        AppConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.decode.validate()?;
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if self.pattern >= prompt::patterns().len() {
            return Err(Error::Config(format!(
                "pattern must be below {}, got {}",
                prompt::patterns().len(),
                self.pattern
            )));
        }
        if self.min_freq == 0 {
            return Err(Error::Config("min_freq must be positive".into()));
        }
        Ok(())
    }
}

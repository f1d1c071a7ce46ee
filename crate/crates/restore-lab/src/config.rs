//! TOML configuration: `[model]` architecture settings and `[train]`
//! optimization settings, every key optional with a documented default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub patch: usize,
    pub seed: u64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub lambda_f: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Random horizontal/vertical flip augmentation.
    pub flips: bool,
    pub log_every: u64,
    pub ckpt_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            steps: 2000,
            patch: 64,
            seed: 0,
            lr_start: 2e-4,
            lr_end: 1e-7,
            lambda_f: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            flips: true,
            log_every: 10,
            ckpt_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.lr_end > self.lr_start {
            return Err(Error::Config(format!(
                "lr_end {} exceeds lr_start {}",
                self.lr_end, self.lr_start
            )));
        }
        if self.lambda_f < 0.0 {
            return Err(Error::Config("lambda_f must be nonnegative".into()));
        }
        if !self.patch.is_multiple_of(8) {
            return Err(Error::Config(format!("patch {} not divisible by 8", self.patch)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Config =
            toml::from_str(&text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(Error::Config)?;
        self.train.validate()
    }
}

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datahub::Augment;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adamw,
    SgdMomentum,
}

/// Optimization settings shared by every run of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub label_smoothing: f64,
    #[serde(default)]
    pub augment: Augment,
    /// Momentum for `sgd_momentum`.
    #[serde(default = "default_momentum")]
    pub momentum: f64,
}

fn default_momentum() -> f64 {
    0.9
}

pub const DEFAULT_TOML: &str = include_str!("../../../../configs/train/default.toml");
pub const SMOKE_TOML: &str = include_str!("../../../../configs/train/smoke.toml");

impl Default for TrainConfig {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_TOML).expect("bundled default config parses")
    }
}

impl TrainConfig {
    /// Ten-epoch profile for CI-sized runs.
    pub fn smoke() -> Self {
        Self::from_toml_str(SMOKE_TOML).expect("bundled smoke config parses")
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid_spec("epochs", "must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid_spec("lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::invalid_spec("label_smoothing", "must be in [0, 1)"));
        }
        if self.batch < 1 {
            return Err(Error::invalid_spec("batch", "must be at least 1"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid_spec("weight_decay", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid_spec("momentum", "must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Format(format!("train config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// `default`, `smoke`, a file under `configs_dir`, or a path.
    pub fn resolve(name_or_path: &str, configs_dir: &Path) -> Result<Self> {
        let candidate = configs_dir.join(format!("{name_or_path}.toml"));
        if candidate.exists() {
            return Self::load(&candidate);
        }
        match name_or_path {
            "default" => Ok(Self::default()),
            "smoke" => Ok(Self::smoke()),
            p => Self::load(Path::new(p)),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

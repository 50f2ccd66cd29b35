use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Dtype;
use crate::surgery::TransferPlan;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Selffer,
    Anb,
    ReverseAnb,
    Matrix,
    Ablation,
    CrossArch,
    CrossDomainArch,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Selffer => "selffer",
            ExperimentKind::Anb => "anb",
            ExperimentKind::ReverseAnb => "reverse_anb",
            ExperimentKind::Matrix => "matrix",
            ExperimentKind::Ablation => "ablation",
            ExperimentKind::CrossArch => "cross_arch",
            ExperimentKind::CrossDomainArch => "cross_domain_arch",
        }
    }
}

/// Which half of the separable convolution moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferKind {
    #[default]
    Depthwise,
    Pointwise,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoint {
    pub arch: String,
    pub dataset: String,
}

fn one() -> u32 {
    1
}

fn default_config() -> String {
    "default".into()
}

/// One experiment, as read from `configs/experiments/*.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// Groups the records of this experiment in the store.
    pub tag: String,
    #[serde(default)]
    pub source: Option<Endpoint>,
    pub target: Endpoint,
    /// Matrix only: every dataset is both a source and a target.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub datasets: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub depths: Vec<usize>,
    #[serde(default)]
    pub transfer_kind: TransferKind,
    /// Ablation only: replaces the default transferred/shuffle/repeat plans.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub plans: Vec<TransferPlan>,
    #[serde(default = "one")]
    pub replicates: u32,
    /// Profile name under `configs/train/` or a path.
    #[serde(default = "default_config")]
    pub config: String,
    /// Keys overriding the resolved profile.
    #[serde(default, skip_serializing_if = "toml::Table::is_empty")]
    pub overrides: toml::Table,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dtype: Option<Dtype>,
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Format(format!("experiment spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment spec serializes")
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype.unwrap_or(Dtype::F32)
    }

    pub fn source(&self) -> Result<&Endpoint> {
        self.source
            .as_ref()
            .ok_or_else(|| Error::invalid_spec("source", format!("required for {}", self.kind.as_str())))
    }

    pub fn validate(&self) -> Result<()> {
        use ExperimentKind::*;
        if self.tag.trim().is_empty() {
            return Err(Error::invalid_spec("tag", "must be nonempty"));
        }
        if self.replicates == 0 {
            return Err(Error::invalid_spec("replicates", "must be at least 1"));
        }
        if matches!(self.kind, Anb | ReverseAnb) && self.depths.is_empty() {
            return Err(Error::invalid_spec("depths", "required for depth curves"));
        }
        if !matches!(self.kind, Anb | ReverseAnb) && !self.depths.is_empty() {
            return Err(Error::invalid_spec("depths", "only used by depth curves"));
        }
        if matches!(self.kind, Anb | ReverseAnb | Ablation | CrossArch | CrossDomainArch) {
            self.source()?;
        }
        if self.kind == Matrix && self.datasets.len() < 2 {
            return Err(Error::invalid_spec("datasets", "a matrix needs at least two datasets"));
        }
        if self.kind != Matrix && !self.datasets.is_empty() {
            return Err(Error::invalid_spec("datasets", "only used by the matrix"));
        }
        if self.kind != Ablation && !self.plans.is_empty() {
            return Err(Error::invalid_spec("plans", "only used by the ablation suite"));
        }
        if self.transfer_kind == TransferKind::Pointwise && !matches!(self.kind, Selffer | Matrix) {
            return Err(Error::invalid_spec("transfer_kind", "pointwise transfer is defined for selffer and matrix"));
        }
        for p in &self.plans {
            p.validate()?;
        }
        Ok(())
    }

    /// The named profile with `overrides` applied.
    pub fn train_config(&self, configs_dir: &Path) -> Result<TrainConfig> {
        let base = TrainConfig::resolve(&self.config, &configs_dir.join("train"))?;
        if self.overrides.is_empty() {
            return Ok(base);
        }
        let mut table: toml::Table = toml::from_str(&base.to_toml_string())
            .map_err(|e| Error::Format(format!("train config: {e}")))?;
        for (k, v) in &self.overrides {
            if !table.contains_key(k) {
                return Err(Error::invalid_spec(format!("overrides.{k}"), "not a train config key"));
            }
            table.insert(k.clone(), v.clone());
        }
        let text = toml::to_string(&table).expect("table serializes");
        TrainConfig::from_toml_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_validates() {
        let text = r#"
            kind = "anb"
            tag = "t"
            depths = [3, 6]
            config = "smoke"
            overrides = { epochs = 1, batch = 32 }
            [source]
            arch = "micro_convnext"
            dataset = "synth100_man_made"
            [target]
            arch = "micro_convnext"
            dataset = "synth100_natural"
        "#;
        let spec = ExperimentSpec::from_toml_str(text).unwrap();
        assert_eq!(spec.replicates, 1);
        let c = spec.train_config(Path::new("/nonexistent")).unwrap();
        assert_eq!((c.epochs, c.batch, c.warmup_epochs), (1, 32, 2));
        assert_eq!(ExperimentSpec::from_toml_str(&spec.to_toml_string()).unwrap(), spec);

        let no_depths = text.replace("depths = [3, 6]", "");
        assert!(ExperimentSpec::from_toml_str(&no_depths).is_err());
        let bad_key = text.replace("epochs = 1", "epoch = 1");
        let spec = ExperimentSpec::from_toml_str(&bad_key).unwrap();
        assert!(spec.train_config(Path::new("/nonexistent")).is_err());
        assert!(ExperimentSpec::from_toml_str(&text.replace("tag = \"t\"", "tag = \"t\"\nbogus = 1")).is_err());
    }
}

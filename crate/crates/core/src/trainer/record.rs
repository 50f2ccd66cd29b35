use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use crate::archzoo::ArchSpec;
use crate::error::{Error, Result};
use crate::scalar::Dtype;
use crate::surgery::{Depth, Direction, Provenance, TransferMode, TransferPlan};

pub const SCHEMA_VERSION: u32 = 1;

/// Role names shared by the protocols and the reports.
pub mod roles {
    /// Trained from scratch.
    pub const BASE: &str = "base";
    /// Own filters transplanted back and frozen.
    pub const SELFFER: &str = "selffer";
    /// Filters from another source, frozen.
    pub const TRANSFER: &str = "transfer";
    /// Same-dataset control curve (BnB).
    pub const CONTROL: &str = "control";
    /// Trailing layers frozen, leading layers trained.
    pub const REVERSE: &str = "reverse";
    pub const SHUFFLE: &str = "shuffle";
    pub const REPEAT_FIRST_K: &str = "repeat_first_k";
    pub const CROSS_ARCH: &str = "cross_arch";
}

/// Exact value of the shortest decimal that round-trips to `x`.
fn decimal(x: f64) -> Option<BigRational> {
    let text = format!("{x}");
    let (int, frac) = text.split_once('.').unwrap_or((&text, ""));
    let digits: BigInt = format!("{int}{frac}").parse().ok()?;
    let scale = BigInt::from(10u8).pow(frac.len() as u32);
    Some(BigRational::new(digits, scale))
}

/// `acc_transfer / acc_base`; may exceed 1.
///
/// Accuracies are ratios of counts, so both are read as the decimals they
/// print as and divided exactly; 0.70 / 0.80 gives exactly 0.875.
pub fn retention(acc_transfer: f64, acc_base: f64) -> Result<f64> {
    if !(acc_base > 0.0) {
        return Err(Error::ZeroBaseline);
    }
    let exact = match (decimal(acc_transfer), decimal(acc_base)) {
        (Some(a), Some(b)) => (a / b).to_f64(),
        _ => None,
    };
    Ok(exact.unwrap_or(acc_transfer / acc_base))
}

/// Everything that determines a run's outcome, declaratively. Its digest is
/// the run's `config_digest` and is known before training starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunKey {
    pub tag: String,
    pub role: String,
    pub arch: ArchSpec,
    pub model_seed: u64,
    pub dataset: String,
    pub dataset_digest: String,
    pub config: TrainConfig,
    pub plan: Option<TransferPlan>,
    /// `config_digest` of the run the transferred filters came from.
    pub source: Option<String>,
    pub replicate: u32,
    pub dtype: Dtype,
}

impl RunKey {
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("run key serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn run_id(&self) -> String {
        format!("{}-{}-{}", self.role, self.dataset, &self.digest()[..12])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub mode: TransferMode,
    pub depth_n: Depth,
    pub k: Option<usize>,
    pub freeze: bool,
    pub rng_seed: Option<u64>,
    pub direction: Direction,
    pub resized: bool,
    pub source: Provenance,
    pub source_bank_digest: String,
}

impl PlanSummary {
    pub fn new(plan: &TransferPlan, resized: bool, source: Provenance, source_bank_digest: String) -> Self {
        Self {
            mode: plan.mode,
            depth_n: plan.depth_n,
            k: plan.k,
            freeze: plan.freeze,
            rng_seed: plan.rng_seed,
            direction: plan.direction,
            resized,
            source,
            source_bank_digest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub run_id: String,
    pub tag: String,
    pub role: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub arch: String,
    pub dataset: String,
    /// Number of training records in `dataset`.
    #[serde(default)]
    pub train_size: usize,
    pub model_seed: u64,
    pub replicate: u32,
    pub plan_summary: Option<PlanSummary>,
    pub config: TrainConfig,
    pub config_digest: String,
    pub per_epoch: Vec<EpochMetrics>,
    pub final_acc: f64,
    pub baseline_ref: Option<String>,
    pub retention: Option<f64>,
    pub frozen_verified: bool,
    pub frozen_params: usize,
    pub dtype: Dtype,
    /// Digest of all parameters at the end of the run.
    pub param_checksum: String,
    pub wall_seconds: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, String>,
}

impl RunRecord {
    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    /// Links the record to a baseline run and fills in retention.
    pub fn link_baseline(&mut self, base: &RunRecord) -> Result<()> {
        self.retention = Some(retention(self.final_acc, base.final_acc)?);
        self.baseline_ref = Some(base.run_id.clone());
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::invalid_spec(field, reason));
        if self.schema_version != SCHEMA_VERSION {
            return bad("schema_version", "unsupported");
        }
        if self.run_id.is_empty() || self.config_digest.is_empty() {
            return bad("run_id", "run_id and config_digest must be set");
        }
        if !(0.0..=1.0).contains(&self.final_acc) {
            return bad("final_acc", "must be a fraction");
        }
        if self.is_completed() {
            match self.per_epoch.last() {
                Some(last) if last.test_acc == self.final_acc => {}
                _ => return bad("final_acc", "must equal the last epoch's test accuracy"),
            }
        }
        if self.retention.is_some() != self.baseline_ref.is_some() {
            return bad("retention", "present iff baseline_ref is present");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn retention_examples() {
        assert_eq!(retention(0.70, 0.80).unwrap(), 0.875);
        assert!((retention(0.862, 0.869).unwrap() - 0.991944764096662).abs() < 1e-12);
        assert!(matches!(retention(0.5, 0.0), Err(Error::ZeroBaseline)));
        assert_eq!(retention(7000.0 / 10000.0, 8000.0 / 10000.0).unwrap(), 0.875);
        assert_eq!(retention(1.2, 0.6).unwrap(), 2.0);
        assert!(retention(-0.5, 1.0).unwrap() == -0.5);
    }

    proptest! {
        #[test]
        fn retention_properties(a in 0.0f64..1.0, b in 1e-6f64..1.0) {
            prop_assert_eq!(retention(b, b).unwrap(), 1.0);
            let r = retention(a, b).unwrap();
            prop_assert!((r * b - a).abs() <= 4.0 * f64::EPSILON * a.max(1e-300));
        }
    }
}

//! Training under freeze masks, evaluation, retention and run records.

mod config;
mod optim;
mod record;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{OptimizerKind, TrainConfig};
pub use optim::{Optimizer, Schedule};
pub use record::{retention, roles, EpochMetrics, PlanSummary, RunKey, RunRecord, RunStatus, SCHEMA_VERSION};

use crate::archive::{read_archive, write_archive};
use crate::archzoo::{build_model, ArchSpec, Model, ParamStore};
use crate::backend::cross_entropy;
use crate::datahub::{make_loaders, Augment, DatasetHandle, TestLoader};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::surgery::{verify_frozen, FreezeMask};

/// Top-1 accuracy over the full test split, no augmentation.
pub fn evaluate<T: Scalar>(model: &Model<T>, test: &TestLoader) -> f64 {
    let classes = model.spec.num_classes;
    let mut correct = 0usize;
    for batch in test.batches::<T>() {
        let logits = model.forward(&batch.images);
        for (row, &label) in logits.chunks_exact(classes).zip(&batch.labels) {
            let mut best = 0;
            for j in 1..classes {
                if row[j] > row[best] {
                    best = j;
                }
            }
            correct += (best == label) as usize;
        }
    }
    if test.is_empty() {
        0.0
    } else {
        correct as f64 / test.len() as f64
    }
}

/// Convenience wrapper: accuracy of `model` on `data`'s test split.
pub fn evaluate_dataset<T: Scalar>(model: &Model<T>, data: &DatasetHandle, batch: usize) -> Result<f64> {
    let loaders = make_loaders(data, batch, Augment::None, 0)?;
    Ok(evaluate(model, &loaders.test))
}

/// Identity and linkage of a run, decided by the caller before training.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub key: RunKey,
    pub plan_summary: Option<PlanSummary>,
    /// When set, the parameter archive and record are written to
    /// `<dir>/<run_id>/`.
    pub checkpoint_dir: Option<PathBuf>,
}

fn frozen_slots<T: Scalar>(model: &Model<T>, mask: &FreezeMask) -> Result<Vec<bool>> {
    let mut frozen = vec![false; model.params.len()];
    for name in mask.names() {
        let s = model
            .params
            .slot(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        frozen[s] = true;
    }
    Ok(frozen)
}

fn check_mask<T: Scalar>(mask: &FreezeMask, model: &Model<T>) -> Result<()> {
    let report = verify_frozen(mask, model)?;
    let first = report.violations().next().map(str::to_string);
    match first {
        Some(name) => Err(Error::MaskViolation(name)),
        None => Ok(()),
    }
}

/// Trains `model` on `data` with `mask` honored, evaluating after every epoch.
///
/// The classifier head is rebuilt when its class count differs from the
/// dataset's. A non-finite loss ends the run with a `failed` record; a frozen
/// tensor that changes is an error.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    data: &DatasetHandle,
    config: &TrainConfig,
    mask: &FreezeMask,
    ctx: &RunContext,
) -> Result<RunRecord> {
    config.validate()?;
    let (h, w, c) = data.image_shape();
    let input = model.spec.input;
    if (input.height, input.width, input.channels) != (h, w, c) {
        return Err(Error::ShapeMismatch(format!(
            "{} expects {}×{}×{} inputs, {} has {h}×{w}×{c}",
            model.spec.name, input.height, input.width, input.channels, data.name
        )));
    }
    if model.spec.num_classes != data.num_classes() {
        model.rebuild_head(data.num_classes());
    }
    check_mask(mask, model)?;
    let frozen = frozen_slots(model, mask)?;

    let seed = config.seed.wrapping_add(ctx.key.replicate as u64);
    let loaders = make_loaders(data, config.batch, config.augment, seed)?;
    let steps_per_epoch = loaders.train.batches_per_epoch();
    let schedule = Schedule::new(config, steps_per_epoch);
    let mut opt = Optimizer::new(config, &model.params, &frozen);
    let classes = data.num_classes();
    let run_id = ctx.key.run_id();
    let started = Instant::now();

    let mut per_epoch = Vec::with_capacity(config.epochs);
    let mut failure = None;
    let mut step = 0usize;
    'epochs: for epoch in 0..config.epochs {
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (i, batch) in loaders.train.epoch::<T>(epoch as u64).enumerate() {
            let (logits, tape) = model.forward_train(&batch.images);
            let (loss, dlogits) = cross_entropy(&logits, &batch.labels, classes, config.label_smoothing);
            if !loss.is_finite() {
                failure = Some(Error::NanLoss { epoch, step: i }.to_string());
                break 'epochs;
            }
            let grads = model.backward(&tape, &dlogits);
            opt.step(&mut model.params, &grads, schedule.lr(step));
            step += 1;
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        check_mask(mask, model)?;
        let test_acc = evaluate(model, &loaders.test);
        let train_loss = loss_sum / seen.max(1) as f64;
        log::info!("{run_id} epoch {}/{}: loss {train_loss:.4} acc {test_acc:.4}", epoch + 1, config.epochs);
        per_epoch.push(EpochMetrics {
            epoch,
            train_loss,
            test_acc,
        });
    }

    let frozen_verified = verify_frozen(mask, model)?.pass;
    if !frozen_verified {
        return Err(Error::MaskViolation(format!("{run_id}: end-of-run verification failed")));
    }
    let record = RunRecord {
        schema_version: SCHEMA_VERSION,
        run_id: run_id.clone(),
        tag: ctx.key.tag.clone(),
        role: ctx.key.role.clone(),
        status: if failure.is_some() { RunStatus::Failed } else { RunStatus::Completed },
        failure,
        arch: model.spec.name.clone(),
        dataset: data.name.clone(),
        train_size: data.train.len(),
        model_seed: ctx.key.model_seed,
        replicate: ctx.key.replicate,
        plan_summary: ctx.plan_summary.clone(),
        config: config.clone(),
        config_digest: ctx.key.digest(),
        final_acc: per_epoch.last().map(|e| e.test_acc).unwrap_or(0.0),
        per_epoch,
        baseline_ref: None,
        retention: None,
        frozen_verified,
        frozen_params: mask.len(),
        dtype: T::DTYPE,
        param_checksum: model.checksum(),
        wall_seconds: started.elapsed().as_secs_f64(),
        notes: Default::default(),
    };
    if let Some(dir) = &ctx.checkpoint_dir {
        let run_dir = dir.join(&run_id);
        save_checkpoint(model, &run_dir.join("model.safetensors"), &run_id)?;
        let path = run_dir.join("record.json");
        std::fs::write(&path, serde_json::to_string_pretty(&record)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(record)
}

const CKPT_KEY: &str = "filtergraft.checkpoint";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    run_id: String,
    seed: u64,
    spec: ArchSpec,
}

pub fn checkpoint_path(dir: &Path, run_id: &str) -> PathBuf {
    dir.join(run_id).join("model.safetensors")
}

/// Parameter archive plus the spec and seed needed to rebuild the model.
pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: &Path, run_id: &str) -> Result<()> {
    let meta = CheckpointMeta {
        run_id: run_id.to_string(),
        seed: model.seed,
        spec: model.spec.clone(),
    };
    let tensors: Vec<(String, _)> = model.params.iter().map(|(n, t)| (n.to_string(), t)).collect();
    write_archive(path, &tensors, CKPT_KEY, &serde_json::to_string(&meta)?)
}

/// Rebuilds the model from its spec and seed, then loads the stored parameters.
/// Returns the model and the run id it was saved under.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(Model<T>, String)> {
    let (tensors, meta) = read_archive::<T>(path, CKPT_KEY)?;
    let meta: CheckpointMeta = serde_json::from_str(&meta)?;
    let mut model = build_model::<T>(&meta.spec, meta.seed)?;
    let mut store = ParamStore::default();
    for (name, t) in tensors {
        store.insert(name, t);
    }
    model.load_params(store)?;
    Ok((model, meta.run_id))
}

//! End-to-end experiments: baselines, depth curves, transfer matrices,
//! ablations and cross-architecture transfer.
//!
//! Every run is keyed by its `config_digest` before training starts. A key
//! already present in the store is returned as is, so rerunning a spec only
//! trains what is missing. Failed runs are stored and never retried.

mod spec;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub use spec::{Endpoint, ExperimentKind, ExperimentSpec, TransferKind};

use crate::archzoo::{build_model, ArchSpec, LayerKind, Model};
use crate::datahub::{load_named, DatasetHandle};
use crate::error::{Error, Result};
use crate::reportkit::ResultStore;
use crate::scalar::{Dtype, Scalar};
use crate::surgery::{
    extract_depthwise, extract_pointwise, transplant, Depth, FilterBank, FreezeMask, Provenance, TransferMode,
    TransferPlan,
};
use crate::trainer::{checkpoint_path, load_checkpoint, roles, train, PlanSummary, RunContext, RunKey, RunRecord, TrainConfig};

/// Added to a run's seed to initialize the fresh model that receives
/// transplanted filters, so it never starts from the source's own weights.
pub const FRESH_SEED_OFFSET: u64 = 1_000_003;

/// Default shuffle seed for the ablation suite.
pub const ABLATION_SHUFFLE_SEED: u64 = 0;

/// Records touched by one protocol call, in execution order.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub records: Vec<RunRecord>,
    /// Runs trained by this call (zero when everything was already stored).
    pub trained: usize,
}

impl Outcome {
    pub fn failed(&self) -> impl Iterator<Item = &RunRecord> {
        self.records.iter().filter(|r| !r.is_completed())
    }

    pub fn by_role<'a>(&'a self, role: &'a str) -> impl Iterator<Item = &'a RunRecord> + 'a {
        self.records.iter().filter(move |r| r.role == role)
    }

    fn push(&mut self, r: &RunRecord) {
        if !self.records.iter().any(|x| x.config_digest == r.config_digest) {
            self.records.push(r.clone());
        }
    }
}

/// Result of [`Runner::ablation_suite`].
#[derive(Debug, Clone)]
pub struct Ablation {
    pub baseline: RunRecord,
    pub selffer: RunRecord,
    /// Same record as `selffer` when source and target coincide.
    pub transferred: RunRecord,
    pub shuffle: RunRecord,
    pub repeat_first_k: RunRecord,
}

struct Prepared<T> {
    model: Model<T>,
    mask: FreezeMask,
    plan_summary: Option<PlanSummary>,
}

/// Shared state for running protocols against one store.
pub struct Runner {
    store: ResultStore,
    data_root: PathBuf,
    configs_dir: PathBuf,
    datasets: BTreeMap<String, DatasetHandle>,
    trained: usize,
}

impl Runner {
    pub fn new(store: ResultStore, data_root: impl Into<PathBuf>, configs_dir: impl Into<PathBuf>) -> Self {
        Self {
            store,
            data_root: data_root.into(),
            configs_dir: configs_dir.into(),
            datasets: BTreeMap::new(),
            trained: 0,
        }
    }

    pub fn store(&self) -> &ResultStore {
        &self.store
    }

    /// Training runs performed by this runner so far.
    pub fn trained(&self) -> usize {
        self.trained
    }

    pub fn dataset(&mut self, name: &str) -> Result<DatasetHandle> {
        if let Some(h) = self.datasets.get(name) {
            return Ok(h.clone());
        }
        let h = load_named(name, &self.data_root, Some(&self.configs_dir.join("splits")))?;
        self.datasets.insert(name.to_string(), h.clone());
        Ok(h)
    }

    pub fn arch(&self, name: &str) -> Result<ArchSpec> {
        ArchSpec::resolve(name, &self.configs_dir)
    }

    #[allow(clippy::too_many_arguments)]
    fn key(
        &self,
        tag: &str,
        role: &str,
        arch: &ArchSpec,
        data: &DatasetHandle,
        config: &TrainConfig,
        replicate: u32,
        transfer: Option<(&TransferPlan, &RunRecord)>,
        dtype: Dtype,
    ) -> RunKey {
        let seed = config.seed.wrapping_add(replicate as u64);
        RunKey {
            tag: tag.to_string(),
            role: role.to_string(),
            arch: arch.with_classes(data.num_classes()),
            model_seed: if transfer.is_some() { seed.wrapping_add(FRESH_SEED_OFFSET) } else { seed },
            dataset: data.name.clone(),
            dataset_digest: data.content_digest.clone(),
            config: config.clone(),
            plan: transfer.map(|(p, _)| TransferPlan {
                source_bank_ref: String::new(),
                ..p.clone()
            }),
            source: transfer.map(|(_, src)| src.config_digest.clone()),
            replicate,
            dtype,
        }
    }

    /// Trains the run described by `key` unless its digest is already stored.
    fn ensure<T: Scalar>(
        &mut self,
        key: RunKey,
        data: &DatasetHandle,
        baseline: Option<&RunRecord>,
        prepare: impl FnOnce(&mut Self) -> Result<Prepared<T>>,
    ) -> Result<RunRecord> {
        let digest = key.digest();
        if let Some(existing) = self.store.find_digest(&digest)? {
            log::info!("{} already stored ({:?}), skipping", existing.run_id, existing.status);
            return Ok(existing);
        }
        if let Some(b) = baseline {
            if !b.is_completed() {
                return Err(Error::UpstreamFailed(b.run_id.clone()));
            }
        }
        let Prepared {
            mut model,
            mask,
            plan_summary,
        } = prepare(self)?;
        log::info!("training {} ({} frozen tensors)", key.run_id(), mask.len());
        let ctx = RunContext {
            key,
            plan_summary,
            checkpoint_dir: Some(self.store.dir().to_path_buf()),
        };
        let config = ctx.key.config.clone();
        let mut record = train(&mut model, data, &config, &mask, &ctx)?;
        self.trained += 1;
        if let (Some(b), true) = (baseline, record.is_completed()) {
            record.link_baseline(b)?;
        }
        self.store.append(&record)?;
        Ok(record)
    }

    /// Trains `arch` from scratch on `dataset`.
    pub fn base<T: Scalar>(
        &mut self,
        tag: &str,
        arch: &ArchSpec,
        dataset: &str,
        config: &TrainConfig,
        replicate: u32,
    ) -> Result<RunRecord> {
        let data = self.dataset(dataset)?;
        let key = self.key(tag, roles::BASE, arch, &data, config, replicate, None, T::DTYPE);
        let (spec, seed) = (key.arch.clone(), key.model_seed);
        self.ensure::<T>(key, &data, None, move |_| {
            Ok(Prepared {
                model: build_model(&spec, seed)?,
                mask: FreezeMask::empty(),
                plan_summary: None,
            })
        })
    }

    /// Filters of a completed run, read back from its checkpoint.
    pub fn bank_of<T: Scalar>(&self, run: &RunRecord, kind: TransferKind) -> Result<FilterBank<T>> {
        if !run.is_completed() {
            return Err(Error::UpstreamFailed(run.run_id.clone()));
        }
        let (model, _) = load_checkpoint::<T>(&checkpoint_path(self.store.dir(), &run.run_id))?;
        let provenance = Provenance::new(&run.arch, &run.dataset, &run.run_id);
        match kind {
            TransferKind::Depthwise => extract_depthwise(&model, provenance),
            TransferKind::Pointwise => extract_pointwise(&model, provenance),
        }
    }

    /// Transplants `plan` from `source` into a fresh `arch`, freezes and
    /// trains on `dataset`; retention is taken against `baseline`.
    #[allow(clippy::too_many_arguments)]
    pub fn transfer<T: Scalar>(
        &mut self,
        tag: &str,
        role: &str,
        arch: &ArchSpec,
        dataset: &str,
        config: &TrainConfig,
        replicate: u32,
        source: &RunRecord,
        plan: &TransferPlan,
        baseline: &RunRecord,
    ) -> Result<RunRecord> {
        plan.validate()?;
        let data = self.dataset(dataset)?;
        let key = self.key(tag, role, arch, &data, config, replicate, Some((plan, source)), T::DTYPE);
        let (spec, seed) = (key.arch.clone(), key.model_seed);
        let kind = match plan.mode {
            TransferMode::PointwiseLayerwise => TransferKind::Pointwise,
            _ => TransferKind::Depthwise,
        };
        self.ensure::<T>(key, &data, Some(baseline), move |runner| {
            let bank = runner.bank_of::<T>(source, kind)?;
            let t = transplant(build_model(&spec, seed)?, &bank, plan)?;
            let summary = PlanSummary::new(plan, t.resized, bank.provenance.clone(), bank.digest());
            Ok(Prepared {
                model: t.model,
                mask: t.mask,
                plan_summary: Some(summary),
            })
        })
    }

    /// Base model plus its selffer: own filters of `kind`, all layers,
    /// transplanted into a fresh model, frozen, retrained.
    pub fn selffer_baseline<T: Scalar>(
        &mut self,
        tag: &str,
        arch: &ArchSpec,
        dataset: &str,
        config: &TrainConfig,
        kind: TransferKind,
        replicate: u32,
    ) -> Result<(RunRecord, RunRecord)> {
        let base = self.base::<T>(tag, arch, dataset, config, replicate)?;
        let selffer = self.transfer::<T>(
            tag,
            roles::SELFFER,
            arch,
            dataset,
            config,
            replicate,
            &base,
            &plan_for(kind),
            &base,
        )?;
        Ok((base, selffer))
    }

    /// AnB and BnB curves. Leading direction fills and freezes layers `0..n`;
    /// trailing (the reverse protocol) freezes `n..L` and trains the rest.
    #[allow(clippy::too_many_arguments)]
    pub fn depth_curve<T: Scalar>(
        &mut self,
        tag: &str,
        source: (&ArchSpec, &str),
        target: (&ArchSpec, &str),
        depths: &[usize],
        config: &TrainConfig,
        trailing: bool,
        replicate: u32,
        out: &mut Outcome,
    ) -> Result<()> {
        let base_a = self.base::<T>(tag, source.0, source.1, config, replicate)?;
        let base_b = self.base::<T>(tag, target.0, target.1, config, replicate)?;
        out.push(&base_a);
        out.push(&base_b);
        let total = target.0.depthwise_count();
        let role = if trailing { roles::REVERSE } else { roles::TRANSFER };
        for &n in depths {
            if n > total {
                return Err(Error::invalid_spec("depths", format!("{n} exceeds the {total} depthwise layers")));
            }
            let plan = if trailing {
                TransferPlan::layerwise_trailing(n)
            } else {
                TransferPlan::layerwise(Depth::N(n))
            };
            for (role, src) in [(role, &base_a), (roles::CONTROL, &base_b)] {
                let r = self.transfer::<T>(tag, role, target.0, target.1, config, replicate, src, &plan, &base_b)?;
                out.push(&r);
            }
        }
        Ok(())
    }

    /// Every ordered pair of `datasets`: diagonal cells are selffers, the
    /// rest transfer all filters of `kind` from the source's base model.
    #[allow(clippy::too_many_arguments)]
    pub fn transfer_matrix<T: Scalar>(
        &mut self,
        tag: &str,
        arch: &ArchSpec,
        datasets: &[String],
        kind: TransferKind,
        config: &TrainConfig,
        replicate: u32,
        out: &mut Outcome,
    ) -> Result<()> {
        let mut bases = Vec::new();
        for d in datasets {
            let (base, selffer) = self.selffer_baseline::<T>(tag, arch, d, config, kind, replicate)?;
            out.push(&base);
            out.push(&selffer);
            bases.push(base);
        }
        let plan = plan_for(kind);
        for (t, target) in datasets.iter().enumerate() {
            for (s, source) in bases.iter().enumerate() {
                if s == t {
                    continue;
                }
                let r = self.transfer::<T>(tag, roles::TRANSFER, arch, target, config, replicate, source, &plan, &bases[t])?;
                out.push(&r);
            }
        }
        Ok(())
    }

    /// Transferred (layerwise all), shuffled and first-k-repeated filters
    /// from `source`, next to the target's base and selffer.
    #[allow(clippy::too_many_arguments)]
    pub fn ablation_suite<T: Scalar>(
        &mut self,
        tag: &str,
        source: (&ArchSpec, &str),
        target: (&ArchSpec, &str),
        plans: &[TransferPlan],
        config: &TrainConfig,
        replicate: u32,
        out: &mut Outcome,
    ) -> Result<Ablation> {
        let (baseline, selffer) =
            self.selffer_baseline::<T>(tag, target.0, target.1, config, TransferKind::Depthwise, replicate)?;
        let source_base = self.base::<T>(tag, source.0, source.1, config, replicate)?;
        out.push(&baseline);
        out.push(&selffer);
        out.push(&source_base);
        let default_plans;
        let plans = if plans.is_empty() {
            default_plans = [
                TransferPlan::layerwise(Depth::All),
                TransferPlan::shuffle(ABLATION_SHUFFLE_SEED),
                TransferPlan::repeat_first_k(crate::surgery::DEFAULT_REPEAT_K),
            ];
            &default_plans[..]
        } else {
            plans
        };
        let mut by_mode = BTreeMap::new();
        for plan in plans {
            let same_as_selffer = source_base.config_digest == baseline.config_digest
                && *plan == TransferPlan::layerwise(Depth::All);
            let r = if same_as_selffer {
                selffer.clone()
            } else {
                let role = match plan.mode {
                    TransferMode::Shuffle => roles::SHUFFLE,
                    TransferMode::RepeatFirstK => roles::REPEAT_FIRST_K,
                    _ => roles::TRANSFER,
                };
                self.transfer::<T>(tag, role, target.0, target.1, config, replicate, &source_base, plan, &baseline)?
            };
            out.push(&r);
            by_mode.insert(plan.mode.as_str(), r);
        }
        let pick = |mode: TransferMode| {
            by_mode
                .get(mode.as_str())
                .cloned()
                .ok_or_else(|| Error::invalid_spec("plans", format!("no {} plan", mode.as_str())))
        };
        Ok(Ablation {
            transferred: pick(TransferMode::Layerwise)?,
            shuffle: pick(TransferMode::Shuffle)?,
            repeat_first_k: pick(TransferMode::RepeatFirstK)?,
            baseline,
            selffer,
        })
    }

    /// Stack transfer from `source` (any architecture with matching kernel
    /// size) into `target`, with the target's base and selffer for reference.
    pub fn cross_arch_transfer<T: Scalar>(
        &mut self,
        tag: &str,
        source: (&ArchSpec, &str),
        target: (&ArchSpec, &str),
        config: &TrainConfig,
        replicate: u32,
        out: &mut Outcome,
    ) -> Result<RunRecord> {
        let source_base = self.base::<T>(tag, source.0, source.1, config, replicate)?;
        out.push(&source_base);
        let (base, selffer) =
            self.selffer_baseline::<T>(tag, target.0, target.1, config, TransferKind::Depthwise, replicate)?;
        out.push(&base);
        out.push(&selffer);
        let r = self.transfer::<T>(
            tag,
            roles::CROSS_ARCH,
            target.0,
            target.1,
            config,
            replicate,
            &source_base,
            &TransferPlan::stack(),
            &base,
        )?;
        out.push(&r);
        Ok(r)
    }

    /// Runs every replicate of `spec`.
    pub fn run_spec(&mut self, spec: &ExperimentSpec) -> Result<Outcome> {
        spec.validate()?;
        match spec.dtype() {
            Dtype::F32 => self.run_spec_as::<f32>(spec),
            Dtype::F64 => self.run_spec_as::<f64>(spec),
        }
    }

    fn run_spec_as<T: Scalar>(&mut self, spec: &ExperimentSpec) -> Result<Outcome> {
        let before = self.trained;
        let config = spec.train_config(&self.configs_dir)?;
        let target_arch = self.arch(&spec.target.arch)?;
        let source = match &spec.source {
            Some(s) => Some((self.arch(&s.arch)?, s.dataset.clone())),
            None => None,
        };
        let src = || {
            source
                .as_ref()
                .map(|(a, d)| (a, d.as_str()))
                .ok_or_else(|| Error::invalid_spec("source", "required"))
        };
        let tgt = (&target_arch, spec.target.dataset.as_str());
        let tag = spec.tag.as_str();
        let mut out = Outcome::default();
        for rep in 0..spec.replicates {
            match spec.kind {
                ExperimentKind::Selffer => {
                    let (b, s) = self.selffer_baseline::<T>(tag, tgt.0, tgt.1, &config, spec.transfer_kind, rep)?;
                    out.push(&b);
                    out.push(&s);
                }
                ExperimentKind::Anb | ExperimentKind::ReverseAnb => {
                    let trailing = spec.kind == ExperimentKind::ReverseAnb;
                    self.depth_curve::<T>(tag, src()?, tgt, &spec.depths, &config, trailing, rep, &mut out)?;
                }
                ExperimentKind::Matrix => {
                    self.transfer_matrix::<T>(tag, tgt.0, &spec.datasets, spec.transfer_kind, &config, rep, &mut out)?;
                }
                ExperimentKind::Ablation => {
                    self.ablation_suite::<T>(tag, src()?, tgt, &spec.plans, &config, rep, &mut out)?;
                }
                ExperimentKind::CrossArch | ExperimentKind::CrossDomainArch => {
                    self.cross_arch_transfer::<T>(tag, src()?, tgt, &config, rep, &mut out)?;
                }
            }
        }
        out.trained = self.trained - before;
        Ok(out)
    }
}

fn plan_for(kind: TransferKind) -> TransferPlan {
    match kind {
        TransferKind::Depthwise => TransferPlan::layerwise(Depth::All),
        TransferKind::Pointwise => TransferPlan::pointwise_layerwise(),
    }
}

/// Loads and runs an experiment file against a store directory.
pub fn run_experiment_file(spec_path: &Path, store_dir: &Path, data_root: &Path, configs_dir: &Path) -> Result<Outcome> {
    let spec = ExperimentSpec::load(spec_path)?;
    let mut runner = Runner::new(ResultStore::open(store_dir)?, data_root, configs_dir);
    runner.run_spec(&spec)
}

/// Which kind of layer a transfer kind touches.
pub fn layer_kind(kind: TransferKind) -> LayerKind {
    match kind {
        TransferKind::Depthwise => LayerKind::Depthwise,
        TransferKind::Pointwise => LayerKind::Pointwise,
    }
}

//! Acceptance criteria 1-11, one PASS/FAIL line each.
//!
//! Criteria 5-9 need the real image datasets. When they are neither cached
//! under `$FILTERGRAFT_DATA` (default `<workspace>/data`) nor downloadable,
//! those lines read `FAIL  blocked: ...` and do not fail the target unless
//! `FILTERGRAFT_STRICT_ACCEPTANCE=1`. Any other FAIL fails the target.
//! `FILTERGRAFT_ACCEPTANCE_FULL=1` runs criterion 5 with the full profile.

mod common;

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::trends::{experiment, TrendSuite, Verdict, CONFIGS};
use filtergraft::archzoo::{build_model, filter_inventory, ArchSpec, LayerKind, Model};
use filtergraft::protocols::{ExperimentSpec, Runner, TransferKind};
use filtergraft::reportkit::{cluster_filters, ResultStore};
use filtergraft::surgery::{
    extract_depthwise, flatten_stack, transplant, verify_frozen, BankEntry, Depth, Direction, FilterBank, Provenance,
    TransferMode, TransferPlan,
};
use filtergraft::tensor::Tensor;
use filtergraft::trainer::{checkpoint_path, load_checkpoint, retention, roles, train, RunContext, RunKey, RunRecord, TrainConfig};
use filtergraft::verify::verify_backend;
use filtergraft::{Dtype, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn within(v: Verdict, started: Instant, limit: Duration) -> Verdict {
    let took = started.elapsed();
    match v {
        Verdict::Pass(d) if took > limit => Verdict::Fail(format!("{d}; took {took:.1?} > {limit:?}")),
        other => other,
    }
}

// ---------------------------------------------------------------- 1

fn conv_oracle() -> Verdict {
    let t = Instant::now();
    let v = match verify_backend(100, 20_240_301) {
        Ok(c) => check(
            c.pass(),
            format!(
                "depthwise {:.2e} pointwise {:.2e} (<= 1e-5), block {:.2e} (<= 1e-4)",
                c.depthwise_max_diff, c.pointwise_max_diff, c.block_max_diff
            ),
        ),
        Err(e) => e.into(),
    };
    within(v, t, Duration::from_secs(60))
}

// ---------------------------------------------------------------- 2

/// One small experiment file per protocol kind, 1 epoch each.
fn protocol_specs() -> Vec<(&'static str, ExperimentSpec)> {
    let common = "config = \"smoke\"\noverrides = { epochs = 1, batch = 128, warmup_epochs = 0 }\n";
    let micro = |src: Option<(&str, &str)>, tgt: (&str, &str)| {
        let mut s = String::new();
        if let Some((a, d)) = src {
            s += &format!("[source]\narch = \"{a}\"\ndataset = \"{d}\"\n");
        }
        s + &format!("[target]\narch = \"{}\"\ndataset = \"{}\"\n", tgt.0, tgt.1)
    };
    let halves = micro(Some(("micro_convnext", "synth100_man_made")), ("micro_convnext", "synth100_natural"));
    let own = micro(None, ("micro_convnext", "synth10"));
    let list = [
        ("selffer", format!("kind = \"selffer\"\ntag = \"fz-selffer\"\n{common}{own}")),
        ("selffer/pointwise", format!("kind = \"selffer\"\ntag = \"fz-selffer\"\ntransfer_kind = \"pointwise\"\n{common}{own}")),
        ("anb", format!("kind = \"anb\"\ntag = \"fz-anb\"\ndepths = [3, 12]\n{common}{halves}")),
        ("reverse_anb", format!("kind = \"reverse_anb\"\ntag = \"fz-rev\"\ndepths = [0, 6]\n{common}{halves}")),
        (
            "matrix",
            format!("kind = \"matrix\"\ntag = \"fz-matrix\"\ndatasets = [\"synth10\", \"synth_sketch\"]\n{common}{own}"),
        ),
        (
            "matrix/pointwise",
            format!(
                "kind = \"matrix\"\ntag = \"fz-matrix-pw\"\ntransfer_kind = \"pointwise\"\ndatasets = [\"synth10\", \"synth_sketch\"]\n{common}{own}"
            ),
        ),
        (
            "ablation",
            format!(
                "kind = \"ablation\"\ntag = \"fz-ablation\"\n{common}{}",
                micro(Some(("micro_convnext", "synth10")), ("micro_convnext", "synth10"))
            ),
        ),
        (
            "cross_arch",
            format!(
                "kind = \"cross_arch\"\ntag = \"fz-cross\"\n{common}{}",
                micro(Some(("micro_gated", "synth10")), ("micro_convnext", "synth10"))
            ),
        ),
        (
            "cross_domain_arch",
            format!(
                "kind = \"cross_domain_arch\"\ntag = \"fz-xdomain\"\n{common}{}",
                micro(Some(("micro_gated", "synth_sketch")), ("micro_convnext", "synth10"))
            ),
        ),
    ];
    list.into_iter()
        .map(|(name, text)| (name, ExperimentSpec::from_toml_str(&text).expect("protocol spec parses")))
        .collect()
}

fn kernel_bits(k: &[f32]) -> Vec<u32> {
    k.iter().map(|v| v.to_bits()).collect()
}

fn kernels_of(t: &Tensor<f32>) -> Vec<Vec<u32>> {
    let per = t.numel() / t.shape[0];
    t.data.chunks(per).map(kernel_bits).collect()
}

/// Reads the trained checkpoint back and checks the frozen kernels against
/// the source bank directly: positionally for layerwise and stack fills,
/// by membership for shuffle and repeat fills.
fn kernels_survived(runner: &Runner, store: &Path, rec: &RunRecord) -> Result<(), String> {
    let Some(p) = &rec.plan_summary else { return Ok(()) };
    let source = runner
        .store()
        .get(&p.source.run_id)
        .map_err(|e| e.to_string())?
        .ok_or("source record missing")?;
    let (model, _) = load_checkpoint::<f32>(&checkpoint_path(store, &rec.run_id)).map_err(|e| e.to_string())?;
    let (kind, lk) = match p.mode {
        TransferMode::PointwiseLayerwise => (TransferKind::Pointwise, LayerKind::Pointwise),
        _ => (TransferKind::Depthwise, LayerKind::Depthwise),
    };
    let bank = runner.bank_of::<f32>(&source, kind).map_err(|e| e.to_string())?;
    let layers: Vec<Vec<Vec<u32>>> = model.layers_of(lk).map(|l| kernels_of(model.params.get(&l.weight).unwrap())).collect();
    let src: Vec<Vec<Vec<u32>>> = bank.entries.iter().map(|e| kernels_of(&e.kernels)).collect();
    let total = layers.len();
    match p.mode {
        TransferMode::Layerwise | TransferMode::PointwiseLayerwise => {
            let n = match p.depth_n {
                Depth::All => total,
                Depth::N(n) => n.min(total),
            };
            let filled = match p.direction {
                Direction::Leading => 0..n,
                Direction::Trailing => n..total,
            };
            for l in filled {
                if layers[l] != src[l] {
                    return Err(format!("layer {l} differs from the source"));
                }
            }
        }
        TransferMode::Stack if !p.resized => {
            let flat: Vec<&Vec<u32>> = src.iter().flatten().collect();
            for (i, k) in layers.iter().flatten().enumerate() {
                if flat.get(i) != Some(&k) {
                    return Err(format!("stack slot {i} differs from source kernel {i}"));
                }
            }
        }
        TransferMode::Shuffle | TransferMode::RepeatFirstK => {
            let pool: HashSet<&Vec<u32>> = src.iter().flatten().collect();
            if let Some(i) = layers.iter().flatten().position(|k| !pool.contains(k)) {
                return Err(format!("kernel {i} is not a source kernel"));
            }
        }
        TransferMode::Stack => {}
    }
    Ok(())
}

/// Transplants, injects a one-ulp change into a frozen tensor, and expects
/// both the verifier and the trainer to reject it.
fn mutation_control(runner: &mut Runner) -> Result<String, String> {
    let arch = ArchSpec::micro_convnext();
    let donor: Model<f32> = build_model(&arch, 11).map_err(|e| e.to_string())?;
    let bank = extract_depthwise(&donor, Provenance::new("micro_convnext", "synth10", "donor")).map_err(|e| e.to_string())?;
    let mut t = transplant(build_model(&arch, 12).unwrap(), &bank, &TransferPlan::layerwise(Depth::All)).map_err(|e| e.to_string())?;
    if !verify_frozen(&t.mask, &t.model).unwrap().pass {
        return Err("clean model failed verification".into());
    }
    let victim = t.mask.names().nth(5).unwrap().to_string();
    let w = &mut t.model.params.get_mut(&victim).unwrap().data[0];
    *w = f32::from_bits(w.to_bits() + 1);
    let report = verify_frozen(&t.mask, &t.model).unwrap();
    let flagged: Vec<&str> = report.violations().collect();
    if report.pass || flagged != [victim.as_str()] {
        return Err(format!("verifier flagged {flagged:?} for a change in {victim}"));
    }
    let data = runner.dataset("synth10").map_err(|e| e.to_string())?;
    let mut config = TrainConfig::smoke();
    config.epochs = 1;
    config.warmup_epochs = 0;
    let key = RunKey {
        tag: "mutation".into(),
        role: roles::SELFFER.into(),
        arch: arch.with_classes(data.num_classes()),
        model_seed: 12,
        dataset: data.name.clone(),
        dataset_digest: data.content_digest.clone(),
        config: config.clone(),
        plan: None,
        source: None,
        replicate: 0,
        dtype: Dtype::F32,
    };
    let ctx = RunContext { key, plan_summary: None, checkpoint_dir: None };
    match train(&mut t.model, &data, &config, &t.mask, &ctx) {
        Err(Error::MaskViolation(name)) if name == victim => Ok(format!("mutation of {victim} rejected")),
        other => Err(format!("trainer accepted a mutated frozen tensor: {:?}", other.map(|r| r.run_id))),
    }
}

struct FreezeRun {
    store: tempfile::TempDir,
    data: PathBuf,
    specs: Vec<(&'static str, ExperimentSpec)>,
}

fn freeze_integrity(data: &Path) -> (Verdict, Option<FreezeRun>) {
    let t = Instant::now();
    let store = tempfile::tempdir().expect("tempdir");
    let mut runner = Runner::new(ResultStore::open(store.path()).unwrap(), data, CONFIGS);
    let specs = protocol_specs();
    let mut checked = 0;
    for (name, spec) in &specs {
        let out = match runner.run_spec(spec) {
            Ok(o) => o,
            Err(e) => return (Verdict::Fail(format!("{name}: {e}")), None),
        };
        for rec in out.records.iter().filter(|r| r.role != roles::BASE) {
            if !rec.is_completed() || !rec.frozen_verified {
                return (Verdict::Fail(format!("{name}: {} not verified", rec.run_id)), None);
            }
            if let Err(e) = kernels_survived(&runner, store.path(), rec) {
                return (Verdict::Fail(format!("{name}: {}: {e}", rec.run_id)), None);
            }
            checked += 1;
        }
    }
    let v = match mutation_control(&mut runner) {
        Ok(d) => Verdict::Pass(format!("{} kinds, {checked} transfer runs verified, {d}", specs.len())),
        Err(e) => Verdict::Fail(format!("negative control: {e}")),
    };
    let v = within(v, t, Duration::from_secs(300));
    let ok = v.is_pass();
    (v, ok.then(|| FreezeRun { store, data: data.to_path_buf(), specs }))
}

// ---------------------------------------------------------------- 3

fn retention_metric() -> Verdict {
    let exact = retention(0.70, 0.80).ok();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let x: f64 = rng.gen_range(1e-9..=1.0);
        if retention(x, x).ok() != Some(1.0) {
            return Verdict::Fail(format!("retention({x}, {x}) != 1"));
        }
        let (a, b): (f64, f64) = (rng.gen_range(0.0..=1.0), rng.gen_range(1e-6..=1.0));
        let r = retention(a, b).unwrap();
        worst = worst.max((r * b - a).abs() / a.max(f64::MIN_POSITIVE));
    }
    let zero = matches!(retention(0.5, 0.0), Err(Error::ZeroBaseline));
    check(
        exact == Some(0.875) && worst <= 4.0 * f64::EPSILON && zero,
        format!("retention(0.70, 0.80) = {:?}, identity on 10000 draws, max rel |r*b - a| {worst:.1e}", exact),
    )
}

// ---------------------------------------------------------------- 4

fn transplant_provenance() -> Verdict {
    let t = Instant::now();
    let v = (|| -> Result<Verdict, Error> {
        let configs = Path::new(CONFIGS);
        let target = ArchSpec::resolve("mini_convnext", configs)?;
        let wide = ArchSpec::resolve("mini_convnext_2x", configs)?;
        let half = ArchSpec::resolve("mini_convnext_half", configs)?;
        // 2 blocks at 48, 2 at 96, 6 at 192, 2 at 384
        let expected: usize = [(2, 48), (2, 96), (6, 192), (2, 384)].iter().map(|(b, c)| b * c).sum();
        let demand = filter_inventory(&target).total_dw_filters;

        let source: Model<f32> = build_model(&wide, 5)?;
        let bank = extract_depthwise(&source, Provenance::new("mini_convnext_2x", "none", "wide"))?;
        let flat = flatten_stack(&bank)?;
        let out = transplant(build_model::<f32>(&target, 6)?, &bank, &TransferPlan::stack())?;
        let origins: Vec<(usize, usize)> = out.provenance.iter().map(|s| (s.source_layer, s.source_channel)).collect();
        let distinct: BTreeSet<(usize, usize)> = origins.iter().copied().collect();
        let prefix = origins.iter().enumerate().all(|(i, o)| flat.origin(i) == *o);
        let mut values_match = true;
        let mut slot = 0;
        for l in out.model.layers_of(LayerKind::Depthwise) {
            let w = out.model.params.get(&l.weight).unwrap();
            let per = w.numel() / w.shape[0];
            for c in 0..w.shape[0] {
                values_match &= w.data[c * per..(c + 1) * per] == *flat.kernel(slot);
                slot += 1;
            }
        }
        let short = transplant(build_model::<f32>(&target, 6)?, &extract_depthwise(&build_model::<f32>(&half, 7)?, Provenance::new("half", "none", "half"))?, &TransferPlan::stack());
        let insufficient = matches!(short, Err(Error::InsufficientStack { .. }));
        Ok(check(
            expected == 2208
                && demand == 2208
                && origins.len() == 2208
                && distinct.len() == 2208
                && prefix
                && values_match
                && flat.len() == 2 * 2208
                && insufficient,
            format!(
                "consumed {} of {} kernels, {} distinct origins, prefix order {prefix}, values {values_match}, half width insufficient {insufficient}",
                origins.len(),
                flat.len(),
                distinct.len()
            ),
        ))
    })()
    .unwrap_or_else(Verdict::from);
    within(v, t, Duration::from_secs(60))
}

// ---------------------------------------------------------------- 10

/// Gaussians (label 0) and x-derivatives of Gaussians (label 1) on a 7x7
/// grid, random width, scale and sign.
fn gaussian_vs_derivative(n: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<usize>) {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let s: f64 = rng.gen_range(0.7..1.8);
        let amp: f64 = rng.gen_range(0.05..10.0);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        for y in 0..7 {
            for x in 0..7 {
                let (dx, dy) = (x as f64 - 3.0, y as f64 - 3.0);
                let g = (-(dx * dx + dy * dy) / (2.0 * s * s)).exp();
                data.push(if i % 2 == 0 { amp * g } else { sign * amp * dx * g });
            }
        }
        labels.push(i % 2);
    }
    (data, labels)
}

fn one_layer(data: Vec<f64>, n: usize) -> FilterBank<f64> {
    FilterBank {
        kind: LayerKind::Depthwise,
        provenance: Provenance::new("synthetic", "none", "gauss"),
        entries: vec![BankEntry {
            layer_id: 0,
            kernels: Tensor::new(vec![n, 7, 7], data).unwrap(),
            bias: Tensor::zeros(&[n]),
        }],
    }
}

/// Fraction of points in their cluster's majority label.
fn majority_purity(clusters: &[usize], labels: &[usize]) -> f64 {
    let k = clusters.iter().max().map_or(0, |m| m + 1);
    let l = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![vec![0usize; l]; k];
    for (&c, &y) in clusters.iter().zip(labels) {
        counts[c][y] += 1;
    }
    counts.iter().map(|row| row.iter().max().unwrap()).sum::<usize>() as f64 / labels.len() as f64
}

fn clustering_sanity() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 200;
    let (data, labels) = gaussian_vs_derivative(n, &mut rng);
    let scaled: Vec<f64> = data
        .chunks(49)
        .flat_map(|k| {
            let c: f64 = rng.gen_range(1e-3..1e3);
            k.iter().map(move |v| v * c).collect::<Vec<_>>()
        })
        .collect();
    let v = (|| -> Result<Verdict, Error> {
        let a = cluster_filters(&[one_layer(data, n)], 2, 0)?;
        let b = cluster_filters(&[one_layer(scaled, n)], 2, 0)?;
        let ca: Vec<usize> = a.assignments.iter().map(|x| x.cluster).collect();
        let cb: Vec<usize> = b.assignments.iter().map(|x| x.cluster).collect();
        let p = majority_purity(&ca, &labels);
        Ok(check(
            ca.len() == n && p == 1.0 && ca == cb,
            format!("purity {p} over {n} kernels, rescaled assignments identical {}", ca == cb),
        ))
    })()
    .unwrap_or_else(Verdict::from);
    within(v, t, Duration::from_secs(60))
}

// ---------------------------------------------------------------- 11

fn determinism(run: Option<&FreezeRun>) -> Verdict {
    let Some(run) = run else {
        return Verdict::Fail("needs the completed protocol runs of criterion 2".into());
    };
    (|| -> Result<Verdict, Error> {
        let mut again = Runner::new(ResultStore::open(run.store.path())?, &run.data, CONFIGS);
        let mut retrained = 0;
        for (_, spec) in &run.specs {
            retrained += again.run_spec(spec)?.trained;
        }
        let first = again.store().records()?;
        let fresh_dir = tempfile::tempdir().expect("tempdir");
        let mut fresh = Runner::new(ResultStore::open(fresh_dir.path())?, &run.data, CONFIGS);
        let mut compared = 0;
        let mut identical = true;
        for (_, spec) in run.specs.iter().filter(|(n, _)| matches!(*n, "selffer" | "anb")) {
            for r in fresh.run_spec(spec)?.records {
                let old = first.iter().find(|o| o.config_digest == r.config_digest);
                identical &= old.is_some_and(|o| o.final_acc.to_bits() == r.final_acc.to_bits() && o.param_checksum == r.param_checksum);
                compared += 1;
            }
        }
        Ok(check(
            retrained == 0 && identical && compared > 0,
            format!("rerun of {} specs trained {retrained}; {compared} runs repeated in a fresh store, identical {identical}", run.specs.len()),
        ))
    })()
    .unwrap_or_else(Verdict::from)
}

// ---------------------------------------------------------------- 5-9

fn real_suite() -> TrendSuite {
    let full = std::env::var("FILTERGRAFT_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    TrendSuite {
        selffer: if full { "selffer_cifar10" } else { "selffer_cifar10_smoke" },
        selffer_min_retention: if full { 0.97 } else { 0.95 },
        pointwise_selffer: "pointwise_selffer_cifar10_smoke",
        anb: "anb_cifar100_man_made_natural",
        ablation: "ablation_cifar10",
        crossarch: "crossarch_gated_to_convnext_cifar10",
    }
}

fn data_root() -> PathBuf {
    std::env::var_os("FILTERGRAFT_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn main() -> ExitCode {
    let data = data_root();
    let strict = std::env::var("FILTERGRAFT_STRICT_ACCEPTANCE").is_ok_and(|v| v == "1");
    let mut lines: Vec<(u32, &str, Verdict, Duration)> = Vec::new();
    let mut timed = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = f();
        let took = t.elapsed();
        println!("criterion {n:>2}  {name:<26} {v}  [{took:.1?}]");
        lines.push((n, name, v, took));
    };

    timed(1, "conv oracle equivalence", &mut conv_oracle);
    let synth_data = tempfile::tempdir().expect("tempdir");
    let mut freeze = None;
    timed(2, "freeze integrity", &mut || {
        let (v, run) = freeze_integrity(synth_data.path());
        freeze = run;
        v
    });
    timed(3, "retention metric", &mut retention_metric);
    timed(4, "transplant provenance", &mut transplant_provenance);

    // real-data trends share one persistent store so reruns resume
    let store_dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-runs");
    let suite = real_suite();
    let mut runner = Runner::new(ResultStore::open(&store_dir).expect("store"), &data, CONFIGS);
    for name in [suite.selffer, suite.pointwise_selffer, suite.anb, suite.ablation, suite.crossarch] {
        assert!(experiment(name).exists(), "missing experiment file {name}");
    }
    timed(5, "selffer trend", &mut || suite.selffer_trend(&mut runner));
    timed(6, "anb flatness trend", &mut || suite.anb_flatness(&mut runner));
    timed(7, "ablation ordering", &mut || suite.ablation_ordering(&mut runner));
    timed(8, "pointwise degradation", &mut || suite.pointwise_degradation(&mut runner));
    timed(9, "cross-architecture", &mut || suite.cross_arch(&mut runner));

    timed(10, "clustering sanity", &mut clustering_sanity);
    timed(11, "determinism/resumability", &mut || determinism(freeze.as_ref()));

    let passed = lines.iter().filter(|l| l.2.is_pass()).count();
    let blocked = lines.iter().filter(|l| matches!(l.2, Verdict::Blocked(_))).count();
    let failed = lines.len() - passed - blocked;
    println!("acceptance: {passed} passed, {failed} failed, {blocked} blocked by the environment");
    if blocked > 0 {
        println!("  blocked criteria need the datasets cached under {}", data.display());
    }
    if failed > 0 || (strict && blocked > 0) {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

//! Trend checks shared by the acceptance target (real datasets) and the
//! offline synthetic suite. Each check runs experiment files through one
//! runner, so base models are trained once and reused across checks.

use std::fmt;
use std::path::{Path, PathBuf};

use filtergraft::protocols::{ExperimentSpec, Outcome, Runner};
use filtergraft::surgery::Depth;
use filtergraft::trainer::{roles, RunRecord};
use filtergraft::Error;

pub const CONFIGS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");

#[derive(Debug, Clone)]
pub enum Verdict {
    Pass(String),
    Fail(String),
    /// The check could not run because of the environment (no data, no network).
    Blocked(String),
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass(_))
    }

    fn check(ok: bool, detail: String) -> Self {
        if ok {
            Verdict::Pass(detail)
        } else {
            Verdict::Fail(detail)
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Pass(d) => write!(f, "PASS  {d}"),
            Verdict::Fail(d) => write!(f, "FAIL  {d}"),
            Verdict::Blocked(d) => write!(f, "FAIL  blocked: {d}"),
        }
    }
}

impl From<Error> for Verdict {
    fn from(e: Error) -> Self {
        match e {
            Error::DownloadFailure { .. } => Verdict::Blocked(format!("dataset not in cache, network unreachable ({e})")),
            other => Verdict::Fail(format!("error: {other}")),
        }
    }
}

/// Experiment files (names under `configs/experiments/`) and thresholds
/// for one flavor of the trend checks.
pub struct TrendSuite {
    pub selffer: &'static str,
    pub selffer_min_retention: f64,
    pub pointwise_selffer: &'static str,
    pub anb: &'static str,
    pub ablation: &'static str,
    pub crossarch: &'static str,
}

pub fn experiment(name: &str) -> PathBuf {
    Path::new(CONFIGS).join("experiments").join(format!("{name}.toml"))
}

/// Loads `name`, makes sure every dataset it touches is available, then runs it.
fn run(runner: &mut Runner, name: &str) -> Result<(ExperimentSpec, Outcome), Verdict> {
    let spec = ExperimentSpec::load(&experiment(name))?;
    let mut datasets = vec![spec.target.dataset.clone()];
    datasets.extend(spec.source.iter().map(|s| s.dataset.clone()));
    datasets.extend(spec.datasets.iter().cloned());
    for d in &datasets {
        runner.dataset(d)?;
    }
    let out = runner.run_spec(&spec)?;
    if let Some(f) = out.failed().next() {
        return Err(Verdict::Fail(format!("run {} failed: {}", f.run_id, f.failure.as_deref().unwrap_or("?"))));
    }
    Ok((spec, out))
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn one_role(out: &Outcome, role: &str) -> Result<f64, Verdict> {
    mean(out.by_role(role).map(|r| r.final_acc)).ok_or_else(|| Verdict::Fail(format!("no {role} record")))
}

fn flatten(r: Result<Verdict, Verdict>) -> Verdict {
    r.unwrap_or_else(|v| v)
}

impl TrendSuite {
    /// Selffer keeps at least `selffer_min_retention` of its scratch baseline.
    pub fn selffer_trend(&self, runner: &mut Runner) -> Verdict {
        flatten((|| {
            let (_, out) = run(runner, self.selffer)?;
            let ret = mean(out.by_role(roles::SELFFER).filter_map(|r| r.retention))
                .ok_or_else(|| Verdict::Fail("selffer has no retention".into()))?;
            let base = one_role(&out, roles::BASE)?;
            Ok(Verdict::check(
                ret >= self.selffer_min_retention,
                format!("retention {ret:.4} (base acc {base:.4}) >= {}", self.selffer_min_retention),
            ))
        })())
    }

    /// Retention across depths spans at most 0.05 and stays >= 0.93 at the deepest cut.
    pub fn anb_flatness(&self, runner: &mut Runner) -> Verdict {
        flatten((|| {
            let (spec, out) = run(runner, self.anb)?;
            let mut by_depth = Vec::new();
            for &d in &spec.depths {
                let at: Vec<&RunRecord> = out
                    .by_role(roles::TRANSFER)
                    .filter(|r| r.plan_summary.as_ref().map(|p| p.depth_n) == Some(Depth::N(d)))
                    .collect();
                let ret = mean(at.iter().filter_map(|r| r.retention))
                    .ok_or_else(|| Verdict::Fail(format!("no transfer at depth {d}")))?;
                by_depth.push((d, ret));
            }
            let lo = by_depth.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
            let hi = by_depth.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
            let deepest = by_depth.iter().max_by_key(|x| x.0).expect("depths nonempty").1;
            let listing: Vec<String> = by_depth.iter().map(|(d, r)| format!("{d}:{r:.4}")).collect();
            Ok(Verdict::check(
                hi - lo <= 0.05 && deepest >= 0.93,
                format!("retention by depth [{}], spread {:.4} <= 0.05, deepest {deepest:.4} >= 0.93", listing.join(" "), hi - lo),
            ))
        })())
    }

    /// Transferred and repeat-first-3 within 0.02 of the scratch baseline,
    /// shuffle no more than 0.05 below it.
    pub fn ablation_ordering(&self, runner: &mut Runner) -> Verdict {
        flatten((|| {
            let (spec, out) = run(runner, self.ablation)?;
            let base = mean(
                out.by_role(roles::BASE)
                    .filter(|r| r.dataset == spec.target.dataset && r.arch == spec.target.arch)
                    .map(|r| r.final_acc),
            )
            .ok_or_else(|| Verdict::Fail("no target baseline".into()))?;
            let transferred = one_role(&out, roles::SELFFER)?;
            let shuffle = one_role(&out, roles::SHUFFLE)?;
            let repeat = one_role(&out, roles::REPEAT_FIRST_K)?;
            let ok = (transferred - base).abs() <= 0.02 && (repeat - base).abs() <= 0.02 && shuffle >= base - 0.05;
            Ok(Verdict::check(
                ok,
                format!("baseline {base:.4} transferred {transferred:.4} shuffle {shuffle:.4} repeat_first_3 {repeat:.4}"),
            ))
        })())
    }

    /// Pointwise selffer ends strictly below the depthwise selffer.
    pub fn pointwise_degradation(&self, runner: &mut Runner) -> Verdict {
        flatten((|| {
            let (_, dw) = run(runner, self.selffer)?;
            let (_, pw) = run(runner, self.pointwise_selffer)?;
            let (d, p) = (one_role(&dw, roles::SELFFER)?, one_role(&pw, roles::SELFFER)?);
            Ok(Verdict::check(p < d, format!("pointwise selffer {p:.4} < depthwise selffer {d:.4}")))
        })())
    }

    /// Cross-architecture stack transfer is frozen-verified and reaches
    /// 0.90 of the target's selffer accuracy.
    pub fn cross_arch(&self, runner: &mut Runner) -> Verdict {
        flatten((|| {
            let (cross_spec, cross) = run(runner, self.crossarch)?;
            let (self_spec, selffer) = run(runner, self.selffer)?;
            if self_spec.target != cross_spec.target {
                return Err(Verdict::Fail(format!("{} and {} have different targets", self.selffer, self.crossarch)));
            }
            let recs: Vec<&RunRecord> = cross.by_role(roles::CROSS_ARCH).collect();
            if recs.is_empty() {
                return Err(Verdict::Fail("no cross_arch record".into()));
            }
            let verified = recs.iter().all(|r| r.frozen_verified && r.frozen_params > 0);
            let acc = mean(recs.iter().map(|r| r.final_acc)).expect("nonempty");
            let target = one_role(&selffer, roles::SELFFER)?;
            Ok(Verdict::check(
                verified && acc >= 0.90 * target,
                format!("frozen_verified {verified}, acc {acc:.4} >= 0.90 x selffer {target:.4} = {:.4}", 0.9 * target),
            ))
        })())
    }
}

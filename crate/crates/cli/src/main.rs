use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use filtergraft::datahub::{load_dataset, load_named, semantic_split, SplitTable};
use filtergraft::protocols::{ExperimentKind, ExperimentSpec, Runner, TransferKind};
use filtergraft::reportkit::{cluster_filters, curve_plot, filter_grid, filter_triptych, matrix_table, CurveY, LayerSelector, ResultStore};
use filtergraft::surgery::{extract_depthwise, extract_pointwise, FilterBank, Provenance};
use filtergraft::trainer::{load_checkpoint, roles, RunRecord, TrainConfig};
use filtergraft::verify::verify_backend;

/// Exit status when every command step worked but some training run failed.
const EXIT_RUN_FAILED: u8 = 2;

#[derive(Parser)]
#[command(name = "filtergraft", version, about = "Depthwise filter transfer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Dirs {
    /// Result store directory (records.jsonl plus one checkpoint dir per run).
    #[arg(long, default_value = "runs")]
    store: PathBuf,
    /// Dataset cache root.
    #[arg(long, default_value = "data")]
    data: PathBuf,
    #[arg(long, default_value = "configs")]
    configs: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Copy the depthwise or pointwise filters of a checkpoint into a bank file.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Kind::Depthwise)]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
        /// Dataset the checkpoint was trained on; looked up in the enclosing store when omitted.
        #[arg(long)]
        dataset: Option<String>,
    },
    #[command(subcommand)]
    Data(DataCmd),
    /// Train one base model from scratch and store its record.
    Train {
        #[arg(long)]
        arch: String,
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value = "default")]
        config: String,
        #[arg(long, default_value = "adhoc")]
        tag: String,
        #[arg(long, default_value_t = 0)]
        replicate: u32,
        #[command(flatten)]
        dirs: Dirs,
    },
    /// Run every training job of an experiment file; finished runs are reused.
    Run {
        #[arg(value_enum)]
        kind: RunKind,
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        dirs: Dirs,
    },
    #[command(subcommand)]
    Report(ReportCmd),
    /// Compare the training backend against the reference convolutions.
    VerifyBackend {
        #[arg(long, default_value_t = 100)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum DataCmd {
    /// Download (if needed), verify and cache a dataset.
    Fetch {
        name: String,
        #[arg(long, default_value = "data")]
        root: PathBuf,
    },
    /// Show the two semantic partitions of a dataset.
    Split {
        name: String,
        #[arg(long, default_value = "data")]
        root: PathBuf,
        #[arg(long, default_value = "configs/splits")]
        splits: PathBuf,
    },
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, default_value = "runs")]
    store: PathBuf,
    #[arg(long)]
    tag: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Transfer matrix as text and JSON.
    Matrix {
        #[command(flatten)]
        args: ReportArgs,
        /// Render missing cells instead of failing.
        #[arg(long)]
        partial: bool,
    },
    /// Depth curves as SVG and JSON.
    Curve {
        #[command(flatten)]
        args: ReportArgs,
        #[arg(long, default_value = "retention")]
        y: String,
    },
    /// Filter grids for every completed base run of the tag.
    Grid {
        #[command(flatten)]
        args: ReportArgs,
        /// first, middle, last or a layer index; all three when omitted.
        #[arg(long)]
        layer: Option<String>,
        #[arg(long, default_value_t = 8)]
        rows: usize,
        #[arg(long, default_value_t = 8)]
        cols: usize,
        /// Shade against the whole layer's range instead of per kernel.
        #[arg(long)]
        layer_range: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// k-means over the depthwise kernels of every completed base run of the tag.
    Cluster {
        #[command(flatten)]
        args: ReportArgs,
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Depthwise,
    Pointwise,
}

#[derive(Clone, Copy, ValueEnum)]
enum RunKind {
    Selffer,
    Anb,
    Reverse,
    Matrix,
    Ablation,
    Crossarch,
}

impl RunKind {
    fn accepts(self, kind: ExperimentKind) -> bool {
        use ExperimentKind as E;
        matches!(
            (self, kind),
            (RunKind::Selffer, E::Selffer)
                | (RunKind::Anb, E::Anb)
                | (RunKind::Reverse, E::ReverseAnb)
                | (RunKind::Matrix, E::Matrix)
                | (RunKind::Ablation, E::Ablation)
                | (RunKind::Crossarch, E::CrossArch | E::CrossDomainArch)
        )
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Extract { checkpoint, kind, out, dataset } => extract(&checkpoint, kind, &out, dataset)?,
        Command::Data(DataCmd::Fetch { name, root }) => {
            let h = load_dataset(&name, &root)?;
            println!(
                "{}: {} train, {} test, {} classes, {}x{}x{}, cache {}",
                h.name,
                h.train.len(),
                h.test.len(),
                h.num_classes(),
                h.train.height,
                h.train.width,
                h.train.channels,
                if h.cache_hit { "hit" } else { "filled" }
            );
            println!("content digest {}", h.content_digest);
        }
        Command::Data(DataCmd::Split { name, root, splits }) => {
            let table = SplitTable::lookup(&name, Some(&splits))?;
            let (a, b) = semantic_split(&load_named(&name, &root, Some(&splits))?, &table)?;
            for (p, h) in table.partitions.iter().zip([a, b]) {
                println!("{}_{}: {} classes, {} train, {} test", name, p.label, h.num_classes(), h.train.len(), h.test.len());
            }
        }
        Command::Train { arch, dataset, config, tag, replicate, dirs } => {
            let mut runner = runner(&dirs)?;
            let cfg = TrainConfig::resolve(&config, &dirs.configs.join("train"))?;
            let spec = runner.arch(&arch)?;
            let rec = runner.base::<f32>(&tag, &spec, &dataset, &cfg, replicate)?;
            print_record(&rec);
            if !rec.is_completed() {
                return Ok(ExitCode::from(EXIT_RUN_FAILED));
            }
        }
        Command::Run { kind, spec, dirs } => {
            let exp = ExperimentSpec::load(&spec)?;
            if !kind.accepts(exp.kind) {
                bail!("{} describes a `{}` experiment", spec.display(), exp.kind.as_str());
            }
            let mut runner = runner(&dirs)?;
            let out = runner.run_spec(&exp)?;
            for rec in &out.records {
                print_record(rec);
            }
            println!("{} records, {} trained now", out.records.len(), out.trained);
            if out.failed().next().is_some() {
                return Ok(ExitCode::from(EXIT_RUN_FAILED));
            }
        }
        Command::Report(r) => report(r)?,
        Command::VerifyBackend { cases, seed } => {
            let c = verify_backend(cases, seed)?;
            println!("cases {} seed {}", c.cases, c.seed);
            println!("depthwise max |diff| {:.3e}", c.depthwise_max_diff);
            println!("pointwise max |diff| {:.3e}", c.pointwise_max_diff);
            println!("block max |diff|     {:.3e}", c.block_max_diff);
            println!("{}", if c.pass() { "PASS" } else { "FAIL" });
            if !c.pass() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn runner(dirs: &Dirs) -> Result<Runner> {
    Ok(Runner::new(ResultStore::open(&dirs.store)?, &dirs.data, &dirs.configs))
}

fn print_record(r: &RunRecord) {
    let acc = if r.is_completed() { format!("{:.4}", r.final_acc) } else { "failed".into() };
    println!("{:<16} {:<44} {acc}", r.role, r.run_id);
}

fn extract(checkpoint: &Path, kind: Kind, out: &Path, dataset: Option<String>) -> Result<()> {
    let (model, run_id) = load_checkpoint::<f32>(checkpoint)?;
    // checkpoints live at <store>/<run_id>/model.safetensors
    let stored = match checkpoint.parent().and_then(Path::parent) {
        Some(dir) if dir.join("records.jsonl").exists() => ResultStore::open(dir)?.get(&run_id)?,
        _ => None,
    };
    let dataset = dataset
        .or_else(|| stored.as_ref().map(|r| r.dataset.clone()))
        .context("no store record for this checkpoint; pass --dataset")?;
    let arch = stored.map(|r| r.arch).unwrap_or_else(|| model.spec.name.clone());
    let provenance = Provenance::new(arch, dataset, run_id);
    let bank = match kind {
        Kind::Depthwise => extract_depthwise(&model, provenance)?,
        Kind::Pointwise => extract_pointwise(&model, provenance)?,
    };
    bank.save(out)?;
    println!("{} layers, {} kernels, digest {} -> {}", bank.len(), bank.total_kernels(), bank.digest(), out.display());
    Ok(())
}

fn base_banks(store: &ResultStore, tag: &str) -> Result<Vec<FilterBank<f32>>> {
    let runner = Runner::new(store.clone(), "data", "configs");
    let bases: Vec<RunRecord> = store
        .by_tag(tag)?
        .into_iter()
        .filter(|r| r.role == roles::BASE && r.is_completed())
        .collect();
    if bases.is_empty() {
        bail!("no completed base runs tagged `{tag}`");
    }
    Ok(bases
        .iter()
        .map(|r| runner.bank_of::<f32>(r, TransferKind::Depthwise))
        .collect::<filtergraft::Result<_>>()?)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("{}", path.display());
    Ok(())
}

fn report(cmd: ReportCmd) -> Result<()> {
    let args = match &cmd {
        ReportCmd::Matrix { args, .. }
        | ReportCmd::Curve { args, .. }
        | ReportCmd::Grid { args, .. }
        | ReportCmd::Cluster { args, .. } => args,
    };
    let store = ResultStore::open(&args.store)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let (tag, out) = (args.tag.as_str(), args.out.as_path());
    match &cmd {
        ReportCmd::Matrix { partial, .. } => {
            let table = matrix_table(&store.records()?, tag, *partial)?;
            let text = table.render_text();
            print!("{text}");
            write(&out.join(format!("{tag}_matrix.txt")), &text)?;
            write(&out.join(format!("{tag}_matrix.json")), &serde_json::to_string_pretty(&table)?)?;
        }
        ReportCmd::Curve { y, .. } => {
            let y: CurveY = y.parse()?;
            let (svg, json, _) = curve_plot(&store.records()?, tag, y, out)?;
            println!("{}\n{}", svg.display(), json.display());
        }
        ReportCmd::Grid { layer, rows, cols, layer_range, seed, .. } => {
            for bank in base_banks(&store, tag)? {
                let prefix = format!("{}_{}", bank.provenance.dataset, bank.provenance.run_id);
                match layer {
                    Some(sel) => {
                        let sel: LayerSelector = sel.parse()?;
                        let png = out.join(format!("{prefix}_{}.png", sel.label()));
                        filter_grid(&bank, sel, *rows, *cols, !layer_range, *seed, &png)?;
                        println!("{}", png.display());
                    }
                    None => {
                        for p in filter_triptych(&bank, *rows, *cols, !layer_range, *seed, out, &prefix)? {
                            println!("{}", p.display());
                        }
                    }
                }
            }
        }
        ReportCmd::Cluster { k, seed, .. } => {
            let banks = base_banks(&store, tag)?;
            let rep = cluster_filters(&banks, *k, *seed)?;
            let sources: Vec<&Provenance> = banks.iter().map(|b| &b.provenance).collect();
            let json = serde_json::json!({ "banks": sources, "report": rep });
            println!("k {} inertia {:.6} excluded {}", rep.k, rep.inertia, rep.excluded.len());
            write(&out.join(format!("{tag}_clusters_k{k}.json")), &serde_json::to_string_pretty(&json)?)?;
        }
    }
    Ok(())
}

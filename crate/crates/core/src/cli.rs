//! The `morel` command-line front end.
//!
//! ```text
//! morel train    [--config F] [--preset P] [--set k=v]... [--seed N] [--epochs N] [--dataset D] [--out DIR]
//! morel evaluate --checkpoint F [--config F] [--set k=v]... [--mode whitebox|blackbox] [--surrogate F] [--out DIR]
//! morel export   --checkpoint F --out F
//! morel report   --input R.json... --out DIR
//! ```
//!
//! Exit codes: 0 on success, 2 for configuration and usage errors, 3 for
//! runtime failures.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use indexmap::IndexMap;
use toml::Value;

use crate::config::{parse_override, EffectiveConfig, RunConfig};
use crate::data::LabeledImages;
use crate::error::{Error, Result};
use crate::evaluation::{self, CheckpointKind, EvalMode, ReportMeta, RobustnessReport, TableRow};
use crate::nn::Network;
use crate::seed;
use crate::training::{self, load_checkpoint, load_model, RunFiles, TrainState};

pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

#[derive(Debug, Parser)]
#[command(name = "morel", version, about = "Adversarial training with a class-aware embedding space")]
pub struct Cli {
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoints, history and the effective config.
    Train(TrainArgs),
    /// Evaluate a checkpoint against an attack suite.
    Evaluate(EvaluateArgs),
    /// Strip a training checkpoint down to the classifier.
    Export(ExportArgs),
    /// Combine report files into a results table and charts.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Method preset: morel-t, morel-m, trades, mart or natural.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override one key, e.g. `--set train.lr=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Root seed (sets `train.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Compute device. Only `cpu` is available.
    #[arg(long, default_value = "cpu")]
    pub device: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Number of epochs; learning-rate milestones at or past it are dropped.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Dataset: cifar10, cifar100 or synthetic.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Run directory.
    #[arg(long, default_value = "runs/latest")]
    pub out: PathBuf,
    /// Continue from `last.ckpt` in the run directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Config for data and suite; defaults to the run's effective config.
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub mode: Option<String>,
    /// Checkpoint used to craft black-box examples.
    #[arg(long)]
    pub surrogate: Option<PathBuf>,
    /// Label for the report: best, last or export. Inferred from the file name.
    #[arg(long)]
    pub kind: Option<String>,
    /// Output directory; defaults to the checkpoint's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report JSON files written by `evaluate`.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .try_init();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Evaluate(a) => cmd_evaluate(&a).map(|_| ()),
        Command::Export(a) => cmd_export(&a.checkpoint, &a.out),
        Command::Report(a) => cmd_report(&a.input, &a.out),
    }
}

/// Defaults, then the file, then `--preset`, then `--set`, then flags.
pub fn effective_config(base: Option<&Path>, args: &ConfigArgs) -> Result<EffectiveConfig> {
    if args.device != "cpu" {
        return Err(Error::config("device", format!("device `{}` is not available (only cpu)", args.device)));
    }
    let mut c = EffectiveConfig::new();
    if let Some(p) = base {
        c.merge_file(p)?;
    }
    if let Some(p) = &args.config {
        c.merge_file(p)?;
    }
    if let Some(p) = &args.preset {
        c.set("preset", Value::String(p.clone()))?;
    }
    let pairs = args
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>>>()?;
    c.merge(&pairs)?;
    if let Some(s) = args.seed {
        c.set("train.seed", Value::Integer(s as i64))?;
    }
    Ok(c)
}

/// The classifier for a run, initialized from the run's seed.
pub fn build_model(run: &RunConfig, data: &LabeledImages) -> Result<Network> {
    run.arch.build(
        data.image_shape(),
        data.class_count(),
        &mut seed::rng(run.train.seed, "init", 0, 0),
    )
}

/// Loads data, trains and writes all run artifacts into `out`.
pub fn train_run(effective: &EffectiveConfig, out: &Path, resume: bool) -> Result<TrainState> {
    let run = effective.resolve()?;
    let files = RunFiles::new(out)?;
    let cfg_path = out.join(EFFECTIVE_CONFIG);
    fs::write(&cfg_path, effective.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    let (train, val) = run.data.load_train_val()?;
    log::info!(
        "{} preset, {} train / {} val samples, {} epochs",
        run.preset,
        train.len(),
        val.len(),
        run.train.epochs
    );
    let state = if resume && files.last().exists() {
        let (state, _) = load_checkpoint(&files.last())?;
        log::info!("resuming at epoch {}", state.epoch);
        state
    } else {
        TrainState::new(build_model(&run, &train)?, &run.train)?
    };
    let state = training::fit(state, &run.train, &train, &val, Some(&files))?;
    if let (Some(m), Some(e)) = (state.best_metric, state.best_epoch) {
        log::info!("best robust accuracy {m:.2}% at epoch {}", e + 1);
    }
    Ok(state)
}

pub fn cmd_train(a: &TrainArgs) -> Result<TrainState> {
    let mut c = effective_config(None, &a.config)?;
    if let Some(d) = &a.dataset {
        c.set("data.dataset", Value::String(d.clone()))?;
    }
    if let Some(n) = a.epochs {
        let kept: Vec<Value> = match c.get("train.lr_milestones") {
            Some(Value::Array(ms)) => ms
                .iter()
                .filter(|m| m.as_integer().is_some_and(|m| (m as usize) < n))
                .cloned()
                .collect(),
            _ => Vec::new(),
        };
        c.set("train.lr_milestones", Value::Array(kept))?;
        c.set("train.epochs", Value::Integer(n as i64))?;
    }
    train_run(&c, &a.out, a.resume)
}

fn infer_kind(path: &Path) -> CheckpointKind {
    match path.file_stem().and_then(|s| s.to_str()) {
        Some("best") => CheckpointKind::Best,
        Some("last") => CheckpointKind::Last,
        _ => CheckpointKind::Export,
    }
}

/// Evaluates a checkpoint; writes `report-<kind>-<mode>.json`, a one-row
/// table and an SVG chart. Returns the report.
pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<RobustnessReport> {
    let dir = a.checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf();
    let echoed = dir.join(EFFECTIVE_CONFIG);
    let base = (a.config.config.is_none() && echoed.exists()).then_some(echoed.as_path());
    let mut c = effective_config(base, &a.config)?;
    if let Some(m) = &a.mode {
        c.set("eval.mode", Value::String(m.clone()))?;
    }
    if let Some(s) = &a.surrogate {
        c.set("eval.surrogate", Value::String(s.display().to_string()))?;
    }
    let run = c.resolve()?;
    let kind = match &a.kind {
        Some(k) => k.parse()?,
        None => infer_kind(&a.checkpoint),
    };
    if run.eval.mode == EvalMode::Blackbox && run.eval.surrogate.is_none() {
        return Err(Error::Usage("--mode blackbox needs --surrogate".into()));
    }
    let test = run.data.load_test()?.subsample(run.eval.limit, run.data.subsample_seed);
    let model = load_model(&a.checkpoint)?;
    let surrogate = run.eval.surrogate.as_deref().map(load_model).transpose()?;
    let model_id = dir
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("model")
        .to_string();
    let meta = ReportMeta {
        model_id,
        checkpoint_kind: kind,
        dataset: run.data.source.name().to_string(),
        seed: run.train.seed,
    };
    let report = evaluation::build_report(&model, &test, &run.eval.suite, run.eval.mode, surrogate.as_ref(), &meta)?;

    let out = a.out.clone().unwrap_or(dir);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let stem = format!("report-{kind}-{}", run.eval.mode);
    report.save(&out.join(format!("{stem}.json")))?;
    let row = TableRow {
        method: report.model_id.clone(),
        best: &report,
        last: None,
    };
    evaluation::write_table(&out.join(format!("{stem}.csv")), &[row])?;
    let svg = out.join(format!("{stem}.svg"));
    fs::write(&svg, evaluation::bar_chart_svg(&report)).map_err(|e| Error::io(&svg, e))?;
    log::info!(
        "clean {:.2}%, avg robust {:.2}% over {} samples",
        report.clean_acc,
        report.avg_robust,
        report.samples
    );
    Ok(report)
}

pub fn cmd_export(checkpoint: &Path, out: &Path) -> Result<()> {
    let (state, config) = load_checkpoint(checkpoint)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    training::export_model(&state, config.as_ref(), out)?;
    log::info!("exported {} parameters to {}", state.model.trainable_count(), out.display());
    Ok(())
}

/// Groups reports by (model, mode) into best/last pairs and writes
/// `table-<mode>.csv` plus one chart per report.
pub fn cmd_report(inputs: &[PathBuf], out: &Path) -> Result<()> {
    let reports = inputs
        .iter()
        .map(|p| RobustnessReport::load(p))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut groups: IndexMap<(EvalMode, String), (Option<&RobustnessReport>, Option<&RobustnessReport>)> =
        IndexMap::new();
    for r in &reports {
        let method = match r.checkpoint_kind {
            CheckpointKind::Export => format!("{} (export)", r.model_id),
            _ => r.model_id.clone(),
        };
        let slot = groups.entry((r.mode, method)).or_default();
        match r.checkpoint_kind {
            CheckpointKind::Last => slot.1 = Some(r),
            _ => slot.0 = Some(r),
        }
        let svg = out.join(format!("{}-{}-{}.svg", r.model_id, r.checkpoint_kind, r.mode));
        fs::write(&svg, evaluation::bar_chart_svg(r)).map_err(|e| Error::io(&svg, e))?;
    }
    for mode in [EvalMode::Whitebox, EvalMode::Blackbox] {
        let rows: Vec<TableRow> = groups
            .iter()
            .filter(|((m, _), _)| *m == mode)
            .filter_map(|((_, id), (best, last))| {
                // A lone "last" report still gets a row, in the best column.
                Some(TableRow {
                    method: id.clone(),
                    best: best.or(*last)?,
                    last: best.and(*last),
                })
            })
            .collect();
        if !rows.is_empty() {
            evaluation::write_table(&out.join(format!("table-{mode}.csv")), &rows)?;
        }
    }
    Ok(())
}

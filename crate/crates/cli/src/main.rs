use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use viewscale::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use viewscale::dataset::{load_dataset, save_dataset};
use viewscale::experiment::{
    collect_stage, emit_report, evaluate_stage, load_reports, run_experiment, save_reports,
    train_stage, ExperimentConfig, MetricsReport, Precision, ReportFormat, SeedResult,
};
use viewscale::{ActionSpace, Real};

/// Camera-view scaling experiments on the built-in manipulation tasks.
#[derive(Parser)]
#[command(name = "viewscale", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record expert demonstrations on every rig camera, one dataset per seed.
    Collect(Overrides),
    /// Train one policy per seed from the collected datasets.
    Train(Overrides),
    /// Roll out the trained policies and write the metrics report.
    Eval(Overrides),
    /// Collect, train and evaluate in one go.
    Run(Overrides),
    /// Render saved reports as CSV, SVG or a text table.
    Report(ReportArgs),
}

#[derive(Args)]
struct Overrides {
    /// TOML experiment configuration; defaults apply to anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Training views, e.g. `0,1,2,3,4`.
    #[arg(long, value_delimiter = ',')]
    views: Option<Vec<usize>>,
    /// Inference views, e.g. `0` or `0,1,2` with --compose.
    #[arg(long, value_delimiter = ',')]
    inference_views: Option<Vec<usize>>,
    /// Action space: base, eef or camera.
    #[arg(long)]
    space: Option<ActionSpace>,
    /// Compose the policy across the inference views.
    #[arg(long)]
    compose: bool,
    /// Composition weight (default: one over the number of inference views).
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Evaluation episodes per seed.
    #[arg(long)]
    episodes: Option<usize>,
    /// Configuration name; used for checkpoint and report file names.
    #[arg(long)]
    name: Option<String>,
    /// Output directory (datasets, checkpoints and reports live here).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Report files written by `eval` or `run`; defaults to every
    /// `*.report.json` in --out.
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "text")]
    format: ReportFormat,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Destination file; defaults to `report.<ext>` in --out.
    #[arg(long)]
    file: Option<PathBuf>,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)
                .with_context(|| format!("loading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(v) = &self.views {
            cfg.train_views = v.clone();
        }
        if let Some(v) = &self.inference_views {
            cfg.inference_views = v.clone();
        }
        if let Some(s) = self.space {
            cfg.space = s;
        }
        if self.compose {
            cfg.compose = true;
        }
        if self.gamma.is_some() {
            cfg.gamma = self.gamma;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(e) = self.episodes {
            cfg.episodes = e;
        }
        if let Some(n) = &self.name {
            cfg.name = n.clone();
        }
        if let Some(o) = &self.out {
            cfg.output_dir = Some(o.clone());
        }
        cfg.validate().context("invalid configuration")?;
        Ok(cfg)
    }
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("results"))
}

fn dataset_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}")).join("dataset")
}

fn checkpoint_path(out: &Path, cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
        .join(format!("{}.ckpt", cfg.name))
}

fn report_path(out: &Path, cfg: &ExperimentConfig) -> PathBuf {
    out.join(format!("{}.report.json", cfg.name))
}

fn collect(cfg: &ExperimentConfig) -> Result<()> {
    let out = out_dir(cfg);
    for &seed in &cfg.seeds {
        let ds = collect_stage(cfg, seed).map_err(|e| e.in_stage("collect"))?;
        let dir = dataset_dir(&out, seed);
        save_dataset(&ds, &dir).map_err(|e| viewscale::Error::from(e).in_stage("collect"))?;
        println!(
            "seed {seed}: {} demonstrations -> {}",
            ds.trajectories.len(),
            dir.display()
        );
    }
    Ok(())
}

fn train_seeds<T: Real>(cfg: &ExperimentConfig) -> Result<()> {
    let out = out_dir(cfg);
    for &seed in &cfg.seeds {
        let dir = dataset_dir(&out, seed);
        let ds = load_dataset(&dir)
            .map_err(|e| viewscale::Error::from(e).in_stage("load dataset"))
            .with_context(|| format!("run `viewscale collect` first ({})", dir.display()))?;
        if ds.rig.len() != cfg.n_cameras() {
            bail!(
                "dataset in {} has {} cameras, configuration expects {}",
                dir.display(),
                ds.rig.len(),
                cfg.n_cameras()
            );
        }
        let trained = train_stage::<T>(cfg, &ds, seed).map_err(|e| e.in_stage("train"))?;
        let path = checkpoint_path(&out, cfg, seed);
        save_checkpoint(&trained.checkpoint, &path)
            .map_err(|e| viewscale::Error::from(e).in_stage("train"))?;
        println!(
            "seed {seed}: final loss {:.4} in {:.1}s -> {}",
            trained.epoch_losses.last().copied().unwrap_or(f64::NAN),
            trained.train_seconds,
            path.display()
        );
    }
    Ok(())
}

fn eval_seeds<T: Real>(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let out = out_dir(cfg);
    let start = Instant::now();
    let rig = cfg.rig();
    let mut per_seed = Vec::new();
    let mut lengths = Vec::new();
    for &seed in &cfg.seeds {
        let path = checkpoint_path(&out, cfg, seed);
        let ckpt: Checkpoint<T> = load_checkpoint(&path)
            .map_err(|e| viewscale::Error::from(e).in_stage("load checkpoint"))
            .with_context(|| format!("run `viewscale train` first ({})", path.display()))?;
        let t = Instant::now();
        let outcomes = evaluate_stage(
            &ckpt,
            &rig,
            &cfg.rollout(),
            &cfg.inference_views,
            cfg.compose,
            cfg.gamma(),
            seed,
            cfg.episodes,
        )
        .map_err(|e| e.in_stage("evaluate"))?;
        lengths.extend(outcomes.iter().map(|o| o.steps));
        let mut r = SeedResult::from_outcomes(seed, &outcomes, None);
        r.eval_seconds = t.elapsed().as_secs_f64();
        println!("seed {seed}: success {:.3}", r.success_rate);
        per_seed.push(r);
    }
    Ok(MetricsReport::new(
        cfg,
        per_seed,
        &lengths,
        start.elapsed().as_secs_f64(),
    ))
}

fn write_outputs(cfg: &ExperimentConfig, report: &MetricsReport) -> Result<()> {
    let out = out_dir(cfg);
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let path = report_path(&out, cfg);
    save_reports(std::slice::from_ref(report), &path)?;
    let table = out.join(format!("{}.txt", cfg.name));
    emit_report(std::slice::from_ref(report), ReportFormat::Text, &table)?;
    print!("{}", std::fs::read_to_string(&table)?);
    println!("report -> {}", path.display());
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let inputs = if args.inputs.is_empty() {
        let mut found: Vec<PathBuf> = std::fs::read_dir(&args.out)
            .with_context(|| format!("reading {}", args.out.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(".report.json"))
            .collect();
        found.sort();
        found
    } else {
        args.inputs.clone()
    };
    if inputs.is_empty() {
        bail!("no reports found in {}", args.out.display());
    }
    let mut reports = Vec::new();
    for p in &inputs {
        reports.extend(load_reports(p)?);
    }
    let ext = match args.format {
        ReportFormat::Csv => "csv",
        ReportFormat::Svg => "svg",
        ReportFormat::Text => "txt",
    };
    let file = args
        .file
        .clone()
        .unwrap_or_else(|| args.out.join(format!("report.{ext}")));
    emit_report(&reports, args.format, &file)?;
    println!("{} configurations -> {}", reports.len(), file.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Collect(o) => collect(&o.resolve()?),
        Command::Train(o) => {
            let cfg = o.resolve()?;
            match cfg.train.precision {
                Precision::F32 => train_seeds::<f32>(&cfg),
                Precision::F64 => train_seeds::<f64>(&cfg),
            }
        }
        Command::Eval(o) => {
            let cfg = o.resolve()?;
            let report = match cfg.train.precision {
                Precision::F32 => eval_seeds::<f32>(&cfg)?,
                Precision::F64 => eval_seeds::<f64>(&cfg)?,
            };
            write_outputs(&cfg, &report)
        }
        Command::Run(o) => {
            let cfg = o.resolve()?;
            let report = run_experiment(&cfg)?;
            write_outputs(&cfg, &report)
        }
        Command::Report(args) => report(&args),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

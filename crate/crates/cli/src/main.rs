use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adamd_core::checkpoint::{load_checkpoint, save_checkpoint};
use adamd_core::config::{ExperimentConfig, ModeKind};
use adamd_core::experiment::{eval_run, read_thresholds, sweep_csv, sweep_run, train_run, write_thresholds};
use adamd_core::pipeline::{breakdown_csv, detections_tsv, metrics_csv, Dataset};
use adamd_core::synth::{generate_dataset, Split};
use adamd_core::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

// Training allocates and frees large buffers every step; the system allocator returns them to the OS each time.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Adaptive multi-scale acoustic event detection.
#[derive(Parser)]
#[command(name = "adamd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (`key = value` lines); defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Adaptive,
    FixedWeight,
    Uniform,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Gaussian noise amplification added to every clip.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Train a model; writes model.ckpt and history.csv.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// 1-based scale boosted in fixed-weight mode.
        #[arg(long)]
        scale: Option<usize>,
        #[arg(long)]
        boost: Option<f64>,
        /// Directory for cached features.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Score a checkpoint; writes metrics.csv, breakdown.csv and detections.tsv.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Per-class thresholds written by `sweep`.
        #[arg(long)]
        threshold_file: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Sweep the decision threshold; writes sweep.csv and thresholds.tsv.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Invalid { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn resolve(common: &Common) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    let out = cfg.out_dir.clone();
    Ok((cfg, out))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn prepare_out(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    write(&out.join("config.txt"), &cfg.to_text())
}

fn split(name: &str) -> Result<Split, Failure> {
    Ok(name.parse()?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth { common, noise } => {
            let (mut cfg, out) = resolve(&common)?;
            if let Some(a) = noise {
                cfg.synth.noise_amplification = a;
            }
            prepare_out(&cfg, &out)?;
            let clips = generate_dataset(&cfg.synth_config(), &out)?;
            eprintln!("wrote {} clips to {}", clips.len(), out.display());
        }
        Command::Train {
            common,
            data,
            mode,
            scale,
            boost,
            cache,
        } => {
            let (mut cfg, out) = resolve(&common)?;
            if let Some(m) = mode {
                cfg.mode = match m {
                    Mode::Adaptive => ModeKind::Adaptive,
                    Mode::FixedWeight => ModeKind::FixedWeight,
                    Mode::Uniform => ModeKind::Uniform,
                };
            }
            if let Some(s) = scale {
                cfg.fixed_scale = s;
            }
            if let Some(b) = boost {
                cfg.fixed_boost = b;
            }
            prepare_out(&cfg, &out)?;
            let ds = Dataset::load(&data)?;
            let run = train_run(&cfg, &ds, cache.as_deref())?;
            save_checkpoint(out.join("model.ckpt"), &run.checkpoint)?;
            write(&out.join("history.csv"), &run.history.to_csv())?;
            eprintln!(
                "best epoch {} of {}, fusion weights {:?}",
                run.best_epoch, cfg.train.epochs, run.checkpoint.fusion.w
            );
        }
        Command::Eval {
            common,
            data,
            checkpoint,
            split: name,
            threshold_file,
            cache,
        } => {
            let (mut cfg, out) = resolve(&common)?;
            let split = split(&name)?;
            let ds = Dataset::load(&data)?;
            let ckpt = load_checkpoint(&checkpoint, Some(&cfg.model_config(ds.class_names.len())))?;
            if let Some(path) = &threshold_file {
                cfg.decision.thresholds = read_thresholds(path, &ds.class_names)?;
            }
            prepare_out(&cfg, &out)?;
            let report = eval_run(&ckpt, &ds, split, &cfg.decision, cfg.collar_s, None, cache.as_deref())?;
            write(&out.join("metrics.csv"), &metrics_csv(&report))?;
            write(&out.join("breakdown.csv"), &breakdown_csv(&report))?;
            write(&out.join("detections.tsv"), &detections_tsv(&report))?;
            eprintln!("fused ER {:.4}", report.fused_er());
        }
        Command::Sweep {
            common,
            data,
            checkpoint,
            split: name,
            cache,
        } => {
            let (cfg, out) = resolve(&common)?;
            let split = split(&name)?;
            let ds = Dataset::load(&data)?;
            let ckpt = load_checkpoint(&checkpoint, Some(&cfg.model_config(ds.class_names.len())))?;
            prepare_out(&cfg, &out)?;
            let sweep = sweep_run(&ckpt, &ds, split, &cfg.decision, &cfg.sweep_grid, cfg.collar_s, cache.as_deref())?;
            write(&out.join("sweep.csv"), &sweep_csv(&sweep, &ds.class_names))?;
            write_thresholds(&out.join("thresholds.tsv"), &sweep.best, &ds.class_names)?;
            eprintln!("best thresholds {:?}", sweep.best);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

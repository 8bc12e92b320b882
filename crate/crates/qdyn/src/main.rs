use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qdyn::commands::{self, EvaluateOptions, TrainOptions};
use qdyn::config::RunConfig;
use qdyn::{QdynError, Result};

#[derive(Parser)]
#[command(name = "qdyn", version, about = "Transformer forecaster for ⟨σz(t)⟩ dynamics")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (key=value).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed; falls back to QDYN_SEED, then the config file, then 0.
    #[arg(long, env = "QDYN_SEED")]
    seed: Option<u64>,
    /// Worker threads for per-trajectory or per-shard work.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write surrogate trajectories over the configured grid.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset directory and write the best checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch CSV log; defaults to <out>.csv.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Serial, reproducible gradient evaluation.
        #[arg(long)]
        deterministic: bool,
        /// Start from this checkpoint's weights with fresh optimizer moments.
        #[arg(long)]
        warm_start: Option<PathBuf>,
    },
    /// Roll a trajectory forward from its first window.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score rollouts against every trajectory of a dataset directory.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Directory for per-trajectory `t,reference,prediction` files.
        #[arg(long)]
        plots: Option<PathBuf>,
        /// Predicted steps; defaults to the rest of each reference.
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn load_config(common: &Common) -> Result<(RunConfig, u64)> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            QdynError::Parse { .. } | QdynError::Core(_) => QdynError::Usage(e.to_string()),
            other => other,
        })?,
        None => RunConfig::default(),
    };
    if let Some(j) = common.jobs {
        cfg.jobs = j;
    }
    let seed = common.seed.or(cfg.seed).unwrap_or(0);
    cfg.validate()?;
    Ok((cfg, seed))
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Generate { common, out } => {
            let (cfg, seed) = load_config(&common)?;
            let entries = commands::generate(&cfg, &out, seed, cfg.jobs)?;
            println!("wrote {} trajectories to {}", entries.len(), out.display());
        }
        Cmd::Train {
            common,
            data,
            out,
            log,
            epochs,
            deterministic,
            warm_start,
        } => {
            let (mut cfg, seed) = load_config(&common)?;
            if let Some(e) = epochs {
                cfg.plan.max_epochs = e;
            }
            if deterministic {
                cfg.plan.deterministic = true;
            }
            let outcome = commands::train(&TrainOptions {
                config: cfg,
                data_dir: data,
                out: out.clone(),
                log,
                seed,
                warm_start,
            })?;
            let best = &outcome.report.best;
            println!(
                "trained on {} samples ({} validation); best validation MSE {:.6e} at epoch {}; wrote {}",
                outcome.train_samples,
                outcome.validation_samples,
                best.best_val_mse,
                best.epoch,
                out.display()
            );
            if !outcome.holdout.is_empty() {
                println!(
                    "withheld {} trajectories in {}",
                    outcome.holdout.len(),
                    commands::holdout_dir(&out).display()
                );
            }
        }
        Cmd::Predict {
            checkpoint,
            input,
            steps,
            out,
        } => {
            let t = commands::predict(&checkpoint, &input, steps, &out)?;
            println!("wrote {} points to {}", t.len(), out.display());
        }
        Cmd::Evaluate {
            checkpoint,
            data,
            report,
            plots,
            horizon,
            jobs,
        } => {
            let r = commands::evaluate(&EvaluateOptions {
                checkpoint: &checkpoint,
                data_dir: &data,
                report: &report,
                plots: plots.as_deref(),
                horizon,
                jobs,
            })?;
            println!(
                "{} trajectories: mean MAE {:.6e} (full trajectory {:.6e})",
                r.rows.len(),
                r.mean_mae,
                r.mean_full_mae
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

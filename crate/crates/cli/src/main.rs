//! `csrobust`: train, certify and compare cost-sensitive robust classifiers.

mod commands;
mod config;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use config::{Precision, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "csrobust", version, about = "Certified cost-sensitive robustness experiments")]
struct Cli {
    /// Worker threads for per-example parallelism. Results are identical
    /// for any count.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,

    /// Output directory, overriding `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write it with its history and a summary.
    Train(RunArgs),
    /// Certify every example of the evaluation split.
    Certify {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        model: PathBuf,
    },
    /// Pairwise robust error grid of the evaluation split.
    Heatmap {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        model: PathBuf,
    },
    /// Two-stage search for the robustness weight (12 training runs).
    TuneAlpha {
        #[command(flatten)]
        run: RunArgs,
        /// Confirms the cost of twelve full training runs.
        #[arg(long)]
        accept_budget: bool,
    },
    /// Compare a baseline and a cost-sensitive model over several radii.
    SweepEps {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
}

fn prepare(run: &RunArgs) -> Result<(RunConfig, PathBuf), CliError> {
    let cfg = RunConfig::load(&run.config)?;
    let out = run.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&out).map_err(|e| CliError::output(&out, e))?;
    Ok((cfg, out))
}

fn dispatch<S: csrobust::numcore::Scalar>(command: &Command, cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    match command {
        Command::Train(_) => commands::cmd_train::<S>(cfg, out),
        Command::Certify { model, .. } => commands::cmd_certify::<S>(cfg, model, out),
        Command::Heatmap { model, .. } => commands::cmd_heatmap::<S>(cfg, model, out),
        Command::TuneAlpha { .. } => commands::cmd_tune_alpha::<S>(cfg, out),
        Command::SweepEps { baseline, model, .. } => commands::cmd_sweep_eps::<S>(cfg, baseline, model, out),
    }
}

fn run(cli: &Cli) -> Result<Value, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("--threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config("--threads", e.to_string()))?;
    }
    let args = match &cli.command {
        Command::Train(run) => run,
        Command::Certify { run, .. } | Command::Heatmap { run, .. } | Command::SweepEps { run, .. } => run,
        Command::TuneAlpha { run, accept_budget } => {
            if !accept_budget {
                return Err(CliError::config("--accept-budget", "tune-alpha trains 12 models; pass --accept-budget"));
            }
            run
        }
    };
    let (cfg, out) = prepare(args)?;
    match cfg.precision {
        Precision::F32 => dispatch::<f32>(&cli.command, &cfg, &out),
        Precision::F64 => dispatch::<f64>(&cli.command, &cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

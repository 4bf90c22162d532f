//! `fedistill` — seeded, config-driven personalized-federated-learning
//! experiments: FedAvg training with per-round snapshots, per-client
//! teacher selection, and grid-searched distillation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedistill_cli::commands::{self, RunPaths, Subset};
use fedistill_cli::config::RunConfig;
use fedistill_cli::error::CliError;

#[derive(Parser)]
#[command(
    name = "fedistill",
    version,
    about = "Simulate personalized federated learning via teacher distillation",
    after_help = "Exit codes: 0 success, 2 config error, 3 data error, 4 integrity error."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "fedistill.toml")]
    config: PathBuf,

    /// Run directory for artifacts; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overwrite existing artifacts and take over a stale lock.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Freeze the federated data partition to split.json.
    Split {
        #[command(flatten)]
        common: Common,
    },
    /// Stage 1: federated averaging with per-round checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Stage 2: teacher selection and grid-searched distillation.
    Distill {
        #[command(flatten)]
        common: Common,
    },
    /// Accuracy of any checkpoint on any client subset.
    Evaluate {
        #[command(flatten)]
        common: Common,

        /// Checkpoint file (.pflc).
        #[arg(long)]
        checkpoint: PathBuf,

        /// split.json to take client index sets from; defaults to the
        /// run directory's.
        #[arg(long)]
        split: Option<PathBuf>,

        /// Client index.
        #[arg(long)]
        client: usize,

        #[arg(long, value_enum, default_value = "test")]
        subset: Subset,
    },
    /// Assemble results.json, tables/, and plotdata/.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<(RunConfig, RunPaths), CliError> {
    let mut cfg = RunConfig::from_path(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| {
            CliError::config("no run directory: pass --out or set output_dir in the config")
        })?;
    Ok((cfg, RunPaths::new(out)))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Split { common } => {
            let (cfg, paths) = load(common)?;
            commands::cmd_split(&cfg, &paths, common.force)
        }
        Command::Train { common } => {
            let (cfg, paths) = load(common)?;
            commands::cmd_train(&cfg, &paths, common.force)
        }
        Command::Distill { common } => {
            let (cfg, paths) = load(common)?;
            commands::cmd_distill(&cfg, &paths, common.force)
        }
        Command::Evaluate {
            common,
            checkpoint,
            split,
            client,
            subset,
        } => {
            let (cfg, paths) = load(common)?;
            let split_path = split.clone().unwrap_or_else(|| paths.split_file());
            commands::cmd_evaluate(&cfg, checkpoint, &split_path, *client, *subset)?;
            Ok(())
        }
        Command::Report { common } => {
            let (cfg, paths) = load(common)?;
            commands::cmd_report(&cfg, &paths, common.force)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

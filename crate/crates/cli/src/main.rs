use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use stochem_cli::commands::{cmd_check_params, cmd_experiment, cmd_run, cmd_snapshot_info, load_config};
use stochem_cli::{Experiment, Overrides, Status};

#[derive(Parser)]
#[command(name = "stochem", version, about = "Stochastic chemotaxis-fluid simulator")]
struct Cli {
    /// Configuration file (INI).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the noise seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run even when the admissibility gate fails.
    #[arg(long, global = true)]
    allow_inadmissible: bool,
    /// Worker threads for replicas and refinement levels.
    #[arg(long, global = true, env = "STOCHEM_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and write diagnostics and snapshots.
    Run,
    /// Evaluate the admissibility conditions without simulating.
    CheckParams,
    /// Run one of the numerical studies.
    Experiment {
        #[arg(value_enum)]
        which: Which,
    },
    /// Summarise a snapshot file.
    SnapshotInfo { path: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Twin,
    Convergence,
    Stratonovich,
    Ensemble,
}

fn execute(cli: Cli) -> Result<Status> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let overrides = Overrides { seed: cli.seed, out: cli.out.clone() };
    let config = || -> Result<_> {
        let path = cli.config.as_ref().context("--config is required for this command")?;
        load_config(path, &overrides)
    };
    let mut out = io::stdout().lock();
    match cli.command {
        Command::Run => cmd_run(&config()?, cli.allow_inadmissible, &mut out),
        Command::CheckParams => cmd_check_params(&config()?, &mut out),
        Command::Experiment { which } => {
            let which = match which {
                Which::Twin => Experiment::Twin,
                Which::Convergence => Experiment::Convergence,
                Which::Stratonovich => Experiment::Stratonovich,
                Which::Ensemble => Experiment::Ensemble,
            };
            cmd_experiment(&config()?, which, cli.allow_inadmissible, &mut out)
        }
        Command::SnapshotInfo { path } => cmd_snapshot_info(&path, &mut out),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(status) => ExitCode::from(status.code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

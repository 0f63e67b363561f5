//! `hscd`: stationary states, time evolution, sweeps and spectra from a TOML
//! configuration.

mod commands;
mod config;
mod error;
mod output;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::commands::Stepper;
use crate::error::CliError;
use crate::output::RunInfo;

#[derive(Debug, Parser)]
#[command(
    name = "hscd",
    version,
    about = "Two-species hard-sphere cross-diffusion solvers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "hscd-out")]
    out: PathBuf,
    /// Worker threads for sweeps (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Time integrator for `evolve`.
    #[arg(long, global = true, value_enum, default_value = "mol")]
    stepper: Stepper,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Constrained entropy minimizer, optionally compared with long-time evolution.
    Equilibrium,
    /// Time evolution with entropy logging.
    Evolve,
    /// Route comparison over a theta or epsilon sweep.
    Sweep,
    /// Linear stability spectrum at the stationary state.
    Stability,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let loaded = config::load(path)?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let start = Instant::now();
    let (name, report) = match cli.command {
        Command::Equilibrium => ("equilibrium", commands::equilibrium(&loaded)?),
        Command::Evolve => ("evolve", commands::evolve(&loaded, cli.stepper)?),
        Command::Sweep => ("sweep", commands::run_sweep(&loaded)?),
        Command::Stability => ("stability", commands::stability(&loaded)?),
    };
    for line in &report.lines {
        println!("{line}");
    }
    let info = RunInfo {
        command: name,
        config: &loaded.config,
        raw_config: &loaded.raw,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    };
    let files: Vec<String> = report.bundle.names().map(str::to_owned).collect();
    let manifest = output::persist(&cli.out, report.bundle, info, report.summary)?;
    println!("wrote {} files and {}", files.len(), manifest.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hscd: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! `gsde`: exit-time estimation and verification for state equations with
//! volatility and drift uncertainty.
//!
//! Exit codes: 0 success (and every check passed), 2 config error, 3
//! numerical failure, 4 solver precondition failure, 5 verification failure.

mod config;
mod report;
mod runners;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "gsde", version, about = "Exit-time bounds and estimates under model uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo value estimates at the configured points.
    Estimate(RunArgs),
    /// Solve the Dirichlet problem on a grid and export the solution.
    Pde(RunArgs),
    /// Run the configured verification checks and write a report.
    Verify(RunArgs),
    /// Exit-time moment bounds against their empirical counterparts.
    Bounds(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for reports.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Override the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, run): (&RunArgs, fn(&config::RunConfig, &std::path::Path) -> _) =
        match &cli.command {
            Command::Estimate(a) => (a, runners::run_estimate),
            Command::Pde(a) => (a, runners::run_pde),
            Command::Verify(a) => (a, runners::run_verify),
            Command::Bounds(a) => (a, runners::run_bounds),
        };
    let result = config::load(&args.config, args.seed).and_then(|cfg| run(&cfg, &args.out));
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code() as u8)
        }
    }
}

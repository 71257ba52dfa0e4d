//! Command-line runner for the weak-dependence experiments.
//!
//! Each subcommand reads a JSON config, runs one experiment and writes
//! JSON reports (and CSV tables when `--out` is given). Exit codes: 0 when
//! every report passes, 1 when any fails or is inconclusive, 2 for usage or
//! config errors, 3 for numerical failures.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
}

impl From<weakdep::Error> for CliError {
    fn from(e: weakdep::Error) -> Self {
        match e {
            weakdep::Error::Domain(_) => CliError::Config(e.to_string()),
            weakdep::Error::Numeric(_) | weakdep::Error::Internal(_) => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "weakdep", version, about = "Weak transport, weak dependence and concentration experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory for `report.json` and CSV tables; reports go to
    /// stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Tolerance override for certified comparisons.
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Weak and classical transport costs with certificates.
    Transport,
    /// Exact or simulated dependence coefficients, norms and constants.
    Gamma,
    /// Check one inequality family.
    Verify {
        #[arg(value_enum)]
        check: Check,
    },
    /// Oracle-inequality bounds and their coverage.
    Oracle,
    /// Simulate a process path to CSV.
    Simulate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Check {
    Wti,
    Dual,
    Tsirelson,
    Poincare,
    Talagrand,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run::execute(&cli) {
        Ok(all_pass) => ExitCode::from(if all_pass { 0 } else { 1 }),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                CliError::Config(_) | CliError::Io(_) => 2,
                CliError::Numeric(msg) => {
                    run::write_stub(&cli, &msg);
                    3
                }
            };
            ExitCode::from(code)
        }
    }
}

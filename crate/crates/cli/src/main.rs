//! `bose2d`: drive the quantum-vs-classical comparison pipeline.
//!
//! Subcommands: `sweep` (full pipeline), `selftest`, `classical-sample`,
//! `quantum-exact`, `wick-check`, `report`. Exit codes: 0 success / verdict
//! pass, 1 verdict fail, 2 invalid configuration or usage, 3 numerical
//! failure. Worker count follows `RAYON_NUM_THREADS`; outputs are
//! byte-identical for a fixed (config, seed) regardless of workers.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod output;
mod selftest;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) | CliError::Io(_) => ExitCode::from(2),
            CliError::Numerical(_) => ExitCode::from(3),
        }
    }
}

impl From<bose2d_core::Error> for CliError {
    fn from(e: bose2d_core::Error) -> Self {
        use bose2d_core::Error as E;
        match e {
            E::Domain(_) | E::Config(_) | E::Usage(_) => CliError::Config(e.to_string()),
            E::Divergence(_) | E::Truncation(_) => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "bose2d",
    version,
    about = "Finite-mode 2D Bose gas vs. classical field ensemble"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Overrides {
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stream count override.
    #[arg(long)]
    streams: Option<u32>,
    /// Sample count override.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write comparison.csv, gibbs_summary.csv and
    /// verdict.json.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the built-in closed-form and oracle checks.
    Selftest {
        /// Corrupt the interaction counterterm by this amount (fault
        /// -injection hook for testing the selftest itself).
        #[arg(long, hide = true, default_value_t = 0.0)]
        inject_counterterm_bias: f64,
    },
    /// Draw the weighted classical ensemble and write its summary.
    ClassicalSample {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Solve the quantum side for every scheduled temperature.
    QuantumExact {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Probe cutoff convergence of the renormalized interaction.
    WickCheck {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Recompute the verdict from an existing comparison.csv.
    Report {
        dir: PathBuf,
        /// Optional config supplying verdict tolerances.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sweep { config, overrides } => commands::sweep(&config, &overrides),
        Command::Selftest { inject_counterterm_bias } => {
            Ok(selftest::run(inject_counterterm_bias))
        }
        Command::ClassicalSample { config, overrides } => {
            commands::classical_sample(&config, &overrides)
        }
        Command::QuantumExact { config, overrides } => {
            commands::quantum_exact(&config, &overrides)
        }
        Command::WickCheck { config, overrides } => commands::wick_check(&config, &overrides),
        Command::Report { dir, config } => commands::report(&dir, config.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

//! `bat`: command-line front end for training, attacking and evaluating
//! models, the concentric-circles lab and the single-neuron sweeps.
//!
//! Exit status is 0 on success, 1 when arguments or configuration are
//! invalid and 2 when an experiment fails while running. Progress goes to
//! standard error; results are only written to files under the output
//! directory, next to a `config.toml` holding the fully resolved
//! configuration.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "bat", version, about = "Blind adversarial training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Run seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted override such as `train.rho=0.8`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a dense network on the configured IDX dataset.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// White-box AA curves and avg-AA of a saved model.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Transfer curves from a source model to a target model.
    Blackbox {
        #[command(flatten)]
        common: Common,
    },
    /// Two-concentric-circles lab.
    Tcc {
        #[command(flatten)]
        common: Common,
        /// Strategy (overrides `tcc.strategy`).
        #[arg(long, value_enum)]
        strategy: Option<TccChoice>,
        /// ℓ∞ budget for `--strategy at`.
        #[arg(long, default_value_t = 0.1)]
        budget: f64,
    },
    /// Single-neuron sweeps and convergence comparison.
    Theory {
        #[command(flatten)]
        common: Common,
        /// Sweep to write: 7 W₁ over λ, 8 W₁ over η, 9 curvature over η, 10 unrestricted ∂L/∂b over η₂; repeatable.
        #[arg(long, value_parser = clap::value_parser!(u32).range(7..=10))]
        fig: Vec<u32>,
        /// Write the two-point convergence comparison.
        #[arg(long)]
        convergence: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TccChoice {
    Nt,
    NtAa,
    At,
    Bat,
}

/// Failure class, mapped to the exit status.
enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

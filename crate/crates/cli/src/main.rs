//! `mfcl`: experiment runner for the mean-field contracting engine.
//!
//! Exit codes: 0 success, 2 invalid input or I/O failure, 3 fixed-point
//! non-convergence, 4 failed verification report.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfcl::Error;

#[derive(Debug, Parser)]
#[command(name = "mfcl", version, about = "Mean-field principal-agent contracting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form policy, moments, contract law and value.
    Solve(Common),
    /// Particle simulation, agent best-response and principal objective.
    Simulate(Common),
    /// Convergence of the N-player contract to its mean-field law.
    Nplayer(Common),
    /// Signs of the comparative statics.
    Sensitivity(Common),
    /// HJB residual and verification report.
    Hjb {
        #[command(flatten)]
        common: Common,
        /// Adds `perturb * t` to the value function before checking it.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        perturb: f64,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// TOML or JSON experiment file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub(crate) enum Outcome {
    Success,
    VerificationFailed,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NonConvergence { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common, perturb) = match &cli.command {
        Command::Solve(c) => ("solve", c, 0.0),
        Command::Simulate(c) => ("simulate", c, 0.0),
        Command::Nplayer(c) => ("nplayer", c, 0.0),
        Command::Sensitivity(c) => ("sensitivity", c, 0.0),
        Command::Hjb { common, perturb } => ("hjb", common, *perturb),
    };
    let run = commands::Run::prepare(name, &common.config, common.seed, common.out.as_deref(), perturb)
        .and_then(|run| run.execute());
    match run {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::VerificationFailed) => {
            eprintln!("mfcl: verification failed");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("mfcl: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

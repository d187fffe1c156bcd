//! `fbmdrift`: simulation, martingale transform, ML and Bayesian drift
//! estimation, optimal stopping and Monte Carlo studies for fractional
//! Brownian motion with drift.
//!
//! Exit codes: 0 success, 1 runtime or numerical failure, 2 invalid usage
//! or configuration.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{Ctx, Run};
use crate::config::{load_config, ConfigError};
use crate::output::Format;

#[derive(Parser)]
#[command(name = "fbmdrift", version, about = "Drift estimation for fractional Brownian motion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Format of tabular outputs.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an observation path ξ = Σθᵢφᵢ + σB^H (writes path.csv).
    Simulate(Common),
    /// Fundamental martingale of an observation CSV (writes martingale.csv).
    Transform(Common),
    /// Maximum-likelihood estimate and trajectory (trajectory.csv, summary.json).
    EstimateMl(Common),
    /// Posterior under a normal or uniform prior (posterior.json).
    EstimateBayes(Common),
    /// Cost curve F(t) under a normal prior and its minimizer (F_curve.csv, summary.json).
    CostCurve(Common),
    /// Deterministic optimal stopping time under a normal prior (summary.json).
    StopNormal(Common),
    /// Lattice stopping policy under a uniform prior (policy.csv, summary.json).
    StopUniform(Common),
    /// Monte Carlo study (report.csv).
    Mc(Common),
    /// Closed-form posterior against the quadrature oracle (oracle.json).
    OracleCheck(Common),
}

type Handler = fn(&Ctx) -> anyhow::Result<Run>;

fn dispatch(cmd: Command) -> (Common, Handler) {
    match cmd {
        Command::Simulate(c) => (c, commands::simulate),
        Command::Transform(c) => (c, commands::transform),
        Command::EstimateMl(c) => (c, commands::estimate_ml),
        Command::EstimateBayes(c) => (c, commands::estimate_bayes),
        Command::CostCurve(c) => (c, commands::cost_curve),
        Command::StopNormal(c) => (c, commands::stop_normal),
        Command::StopUniform(c) => (c, commands::stop_uniform),
        Command::Mc(c) => (c, commands::mc),
        Command::OracleCheck(c) => (c, commands::oracle_check),
    }
}

fn run(common: Common, handler: Handler) -> anyhow::Result<Option<String>> {
    let cfg = load_config(&common.config)?;
    let base = common
        .config
        .parent()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    let ctx = Ctx {
        cfg: &cfg,
        base: &base,
        seed: common.seed,
        format: common.format,
    };
    let result = handler(&ctx)?;
    for path in result.outputs.commit(&common.out)? {
        eprintln!("wrote {}", path.display());
    }
    print!("{}", result.stdout);
    Ok(result.failed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, handler) = dispatch(cli.command);
    match run(common, handler) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

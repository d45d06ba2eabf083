//! `fluxcal` command-line tool.

mod commands;
mod config;
mod data;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ModeArg;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "fluxcal", version, about = "Flux-addition nonlinearity characterization")]
struct Cli {
    /// Worker threads for bootstrap, cross-validation and simulation
    /// (0 = one per core). Results do not depend on this value.
    #[arg(long, global = true, env = "FLUXCAL_JOBS", default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate sphere scenarios or a two-beam dataset.
    Simulate {
        /// Sphere scenario 1-4.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4), required_unless_present = "conjoiner")]
        scenario: Option<u8>,
        /// Simulate a two-beam conjoiner dataset instead.
        #[arg(long, conflicts_with = "scenario")]
        conjoiner: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Number of datasets; each gets its own derived seed.
        #[arg(long)]
        datasets: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Maximum-likelihood fit.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Pairs bootstrap around a previous fit.
    Bootstrap {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// fit.json written by `fit`.
        #[arg(long)]
        fit: PathBuf,
        /// Replicates (default from the configuration).
        #[arg(long = "B")]
        replicates: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// K-fold cross-validation of the polynomial degree.
    Cv {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        pmin: usize,
        #[arg(long, default_value_t = 8)]
        pmax: usize,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Single-point calibration and calibrated fluxes.
    Calibrate {
        #[arg(long)]
        fit: PathBuf,
        /// ensemble.json written by `bootstrap`.
        #[arg(long)]
        ensemble: PathBuf,
        #[arg(long = "phi-ref")]
        phi_ref: f64,
        #[arg(long = "n-ref")]
        n_ref: f64,
        /// `grid` (101 readings), `grid:N`, or a CSV file with an `n` column.
        #[arg(long = "eval-at", default_value = "grid")]
        eval_at: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Likelihood fit against the legacy least-squares fit.
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "B")]
        replicates: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Points of the flux grid.
        #[arg(long, default_value_t = 101)]
        points: usize,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Bias and coverage over simulated datasets of one scenario.
    Evaluate {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        scenario: u8,
        #[arg(long, default_value_t = 100)]
        datasets: usize,
        #[arg(long = "B", default_value_t = 1000)]
        replicates: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// 10 datasets and B = 100.
        #[arg(long)]
        quick: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    use commands::*;
    match cli.command {
        Command::Simulate {
            scenario,
            conjoiner,
            seed,
            out,
            datasets,
            config,
        } => simulate::run(scenario, conjoiner, seed, &out, datasets, config.as_deref()),
        Command::Fit { data, config, out, mode } => fit::run(&data, config.as_deref(), &out, mode),
        Command::Bootstrap {
            data,
            config,
            fit,
            replicates,
            seed,
            out,
            mode,
        } => bootstrap::run(&data, config.as_deref(), &fit, replicates, seed, &out, mode),
        Command::Cv {
            data,
            config,
            pmin,
            pmax,
            folds,
            seed,
            out,
            mode,
        } => cv::run(&data, config.as_deref(), pmin..=pmax, folds, seed, &out, mode),
        Command::Calibrate {
            fit,
            ensemble,
            phi_ref,
            n_ref,
            eval_at,
            out,
        } => calibrate::run(&fit, &ensemble, phi_ref, n_ref, &eval_at, &out),
        Command::Compare {
            data,
            config,
            out,
            replicates,
            seed,
            points,
            mode,
        } => compare::run(&data, config.as_deref(), &out, replicates, seed, points, mode),
        Command::Evaluate {
            scenario,
            datasets,
            replicates,
            seed,
            quick,
            config,
            out,
        } => {
            let (datasets, replicates) = if quick { (10, 100) } else { (datasets, replicates) };
            evaluate::run(scenario, datasets, replicates, seed, config.as_deref(), &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! `pfoe`: noise, denoise, train, evaluate and calibrate FoE Poisson
//! denoisers from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
//! The worker thread count is read from `PFOE_THREADS`.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod model_file;
pub mod reference;

use clap::{Parser, Subcommand};

pub use error::{CliError, CliResult};

pub const THREADS_ENV: &str = "PFOE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "pfoe", version, about = "Poisson denoising with a Fields-of-Experts prior")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scale a clean image to a peak and draw Poisson counts.
    Noise(commands::noise::NoiseArgs),
    /// Denoise a count image with a trained model.
    Denoise(commands::denoise::DenoiseArgs),
    /// Learn FoE filters from a directory of clean images.
    Train(commands::train::TrainArgs),
    /// Run the benchmark and report against the published figures.
    Eval(commands::eval::EvalArgs),
    /// Fit data-term weights per peak on a validation set.
    Calibrate(commands::calibrate::CalibrateArgs),
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Noise(a) => commands::noise::run(a),
        Command::Denoise(a) => commands::denoise::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::Calibrate(a) => commands::calibrate::run(a),
    }
}

/// Sizes the global worker pool from `PFOE_THREADS` when it is set.
pub fn init_threads() -> CliResult<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(format!("{THREADS_ENV} must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(format!("cannot size the thread pool: {e}")))
}

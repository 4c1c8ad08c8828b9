//! `kpinn`: experiment driver for reference simulation, QSS reduction,
//! PINN training, evaluation, architecture sweeps, stiffness reports and
//! plotting.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure,
//! 4 sweep finished with failed cells.

mod commands;
mod config;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{failed} of {total} sweep cells failed")]
    PartialSweep { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Io(_) => 2,
            Self::Numeric(_) => 3,
            Self::PartialSweep { .. } => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "kpinn",
    version,
    about = "Stiff chemical kinetics: reference solvers, QSS reduction and physics-informed networks",
    after_help = "Any setting can be overridden as --<section>.<key>=<value>, e.g. --training.max_updates=500"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the full (or reduced) system and write the trajectory.
    Simulate,
    /// Select QSS species by threshold and self-test the closure.
    Reduce,
    /// Train a regular or stiff PINN and write a checkpoint.
    Train,
    /// RMSE of a checkpoint against a reference trajectory.
    Evaluate,
    /// Train every architecture of a grid over several seeds.
    Sweep,
    /// Jacobian spectra along a reference run and solver step counts.
    Stiffness,
    /// Render CSV columns as an SVG line plot.
    Plot,
}

/// Shorthands for the most common settings.
#[derive(Debug, Args)]
struct Common {
    /// INI configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// `builtin:<name>` or a mechanism file ([mechanism] source).
    #[arg(long, global = true)]
    mechanism: Option<String>,
    /// bdf or dopri5 ([solver] method).
    #[arg(long, global = true)]
    method: Option<String>,
    /// Output directory ([output] directory).
    #[arg(long, global = true)]
    output: Option<String>,
    /// regular or stiff ([training] mode).
    #[arg(long, global = true)]
    mode: Option<String>,
    /// [training] seed.
    #[arg(long, global = true)]
    seed: Option<String>,
    /// [training] max_updates.
    #[arg(long, global = true)]
    max_updates: Option<String>,
    /// [qssa] threshold.
    #[arg(long, global = true)]
    threshold: Option<String>,
    /// [evaluate] checkpoint.
    #[arg(long, global = true)]
    checkpoint: Option<String>,
    /// [evaluate] reference.
    #[arg(long, global = true)]
    reference: Option<String>,
    /// [evaluate] points.
    #[arg(long, global = true)]
    points: Option<String>,
    /// Comma-separated CSV inputs for `plot` ([plot] inputs).
    #[arg(long, global = true)]
    input: Option<String>,
    /// Logarithmic abscissa for `plot`.
    #[arg(long, global = true)]
    logx: bool,
    /// Logarithmic ordinate for `plot`.
    #[arg(long, global = true)]
    logy: bool,
    /// Also render SVG figures ([output] svg).
    #[arg(long, global = true)]
    emit_svg: bool,
}

/// Splits `--section.key=value` overrides from the arguments clap parses.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String, String)>), CliError> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for arg in args {
        if let Some(body) = arg.strip_prefix("--") {
            if let Some((name, value)) = body.split_once('=') {
                if let Some((section, key)) = name.split_once('.') {
                    overrides.push((section.to_string(), key.to_string(), value.to_string()));
                    continue;
                }
            } else if body.contains('.') {
                return Err(CliError::Config(format!("override `{arg}` needs the form --section.key=value")));
            }
        }
        rest.push(arg);
    }
    Ok((rest, overrides))
}

fn build_config(common: &Common, overrides: &[(String, String, String)]) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let shorthands = [
        ("mechanism", "source", &common.mechanism),
        ("solver", "method", &common.method),
        ("output", "directory", &common.output),
        ("training", "mode", &common.mode),
        ("training", "seed", &common.seed),
        ("training", "max_updates", &common.max_updates),
        ("qssa", "threshold", &common.threshold),
        ("evaluate", "checkpoint", &common.checkpoint),
        ("evaluate", "reference", &common.reference),
        ("evaluate", "points", &common.points),
        ("plot", "inputs", &common.input),
    ];
    for (section, key, value) in shorthands {
        if let Some(v) = value {
            cfg.set(section, key, v)?;
        }
    }
    if common.logx {
        cfg.plot.logx = true;
    }
    if common.logy {
        cfg.plot.logy = true;
    }
    if common.emit_svg {
        cfg.output.svg = true;
    }
    for (section, key, value) in overrides {
        cfg.set(section, key, value)?;
    }
    Ok(cfg)
}

fn run() -> Result<(), CliError> {
    let (args, overrides) = split_overrides(std::env::args().collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => return Err(CliError::Config(e.to_string())),
    };
    let cfg = build_config(&cli.common, &overrides)?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Reduce => commands::reduce(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Sweep => commands::sweep(&cfg),
        Command::Stiffness => commands::stiffness(&cfg),
        Command::Plot => commands::plot(&cfg),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kpinn: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

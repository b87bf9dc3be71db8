//! `gpfractal`: run simulation, dimension, capacity, hitting and scale
//! checks from JSON configs.
//!
//! Exit codes: 0 on success, 2 on invalid configuration or input, 3 on a
//! numerical failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::output::OutDir;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] gpfractal::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "gpfractal", version, about = "Fractal geometry of Gaussian processes with a general variance scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Override the seed of the config (every instance, for a battery).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap on worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Progress on stderr and extra detail tables.
    #[arg(long, global = true)]
    trace: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Sample paths on a time grid.
    Simulate,
    /// Dimension estimates (image, intersection, δ, product).
    Dims,
    /// Hitting probability, optional capacity/content terms and small balls.
    Hit,
    /// Capacity sweep over resolutions.
    Capacity,
    /// Strong, weak and Ψ√log checks for a list of scales.
    CheckScale,
    /// Cantor set intervals and its mass-distribution measure.
    Cantor,
    /// Sandwich battery of hitting instances.
    Battery,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Dims => "dims",
            Command::Hit => "hit",
            Command::Capacity => "capacity",
            Command::CheckScale => "check-scale",
            Command::Cantor => "cantor",
            Command::Battery => "battery",
        }
    }
}

fn load<C: DeserializeOwned>(cli: &Cli) -> Result<C, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn execute<C: Serialize>(
    cli: &Cli,
    cfg: &C,
    seed: Option<u64>,
    run: impl FnOnce(&C, &mut OutDir) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let started = SystemTime::now();
    let clock = Instant::now();
    let mut out = OutDir::create(&cli.out, cli.trace)?;
    run(cfg, &mut out)?;
    out.finish(cli.command.name(), cfg, seed, started, clock.elapsed())
}

fn override_seed(slot: &mut u64, cli: Option<u64>) -> u64 {
    if let Some(s) = cli {
        *slot = s;
    }
    *slot
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate => {
            let mut c: config::SimulateConfig = load(cli)?;
            let seed = override_seed(&mut c.seed, cli.seed);
            execute(cli, &c, Some(seed), commands::simulate)
        }
        Command::Dims => {
            let mut c: config::DimsConfig = load(cli)?;
            let seed = match &mut c {
                config::DimsConfig::Image(x) => Some(override_seed(&mut x.seed, cli.seed)),
                config::DimsConfig::Intersection(x) => Some(override_seed(&mut x.seed, cli.seed)),
                _ => None,
            };
            execute(cli, &c, seed, commands::dims)
        }
        Command::Hit => {
            let mut c: config::HitConfig = load(cli)?;
            let seed = override_seed(&mut c.problem.seed, cli.seed);
            execute(cli, &c, Some(seed), commands::hit)
        }
        Command::Capacity => {
            let c: config::CapacityConfig = load(cli)?;
            execute(cli, &c, None, commands::capacity)
        }
        Command::CheckScale => {
            let c: config::CheckScaleConfig = load(cli)?;
            execute(cli, &c, None, commands::check_scale)
        }
        Command::Cantor => {
            let c: config::CantorConfig = load(cli)?;
            execute(cli, &c, None, commands::cantor)
        }
        Command::Battery => {
            let mut c: config::BatteryConfig = load(cli)?;
            if let Some(s) = cli.seed {
                c.instances.iter_mut().for_each(|p| p.seed = s);
            }
            execute(cli, &c, cli.seed, commands::battery)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

//! `lshmoe`: drive simulated MoE steps, hash ablations, and cost-model
//! studies from a single JSON config.
//!
//! Exit codes: 0 on success, 2 on config or validation errors, 1 on internal
//! invariant violations.

mod commands;
mod config;
mod report;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use lshmoe_core::cost_model::SweepAxis;
use lshmoe_core::HashFamily;

use config::ExperimentConfig;
use report::Format;

/// Error carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad config or arguments: exit 2.
    Config(String),
    /// A simulator invariant failed to hold: exit 1.
    Internal(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        CliError::Internal(msg.into())
    }

    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Internal(_) => ExitCode::from(1),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Internal(m) => write!(f, "internal invariant violation: {m}"),
        }
    }
}

impl From<lshmoe_core::Error> for CliError {
    fn from(e: lshmoe_core::Error) -> Self {
        // Core errors surfacing here mean the config described an
        // inconsistent experiment.
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(format!("io error: {e}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Parser)]
#[command(
    name = "lshmoe",
    version,
    about = "Deterministic simulator and cost model for LSH-compressed expert-parallel MoE steps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Write the report here instead of stdout (overrides the config's
    /// output field).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,
}

#[derive(Subcommand)]
enum Command {
    /// Run one baseline step and, when the config has an lsh section, the
    /// compressed step against it.
    Simulate {
        /// Experiment config (JSON).
        config: PathBuf,
    },
    /// Run the compressed step across hash-function counts and families.
    SweepHashes {
        /// Experiment config (JSON).
        config: PathBuf,
        /// Hash function counts, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10")]
        q: Vec<usize>,
        /// Hash families (cp, sp), comma separated.
        #[arg(long, value_delimiter = ',', default_value = "cp,sp")]
        families: Vec<String>,
    },
    /// Evaluate the closed-form step-time model, optionally sweeping axes.
    CostModel {
        /// Experiment config (JSON).
        config: PathBuf,
        /// Axis sweep like `w=2,4,8,16`; repeatable.
        #[arg(long = "sweep")]
        sweeps: Vec<String>,
    },
}

/// Worker parallelism hint; defaults to 1 and never changes outputs.
fn thread_hint() -> usize {
    std::env::var("LSHMOE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t >= 1)
        .unwrap_or(1)
}

fn parse_sweep_arg(arg: &str) -> Result<(SweepAxis, Vec<f64>), CliError> {
    let (axis, values) = arg
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("sweep {arg:?} must look like w=2,4,8")))?;
    let axis = SweepAxis::parse(axis).map_err(|e| CliError::config(e.to_string()))?;
    let values = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::config(format!("sweep value {v:?} is not a number")))
        })
        .collect::<Result<Vec<f64>, CliError>>()?;
    if values.is_empty() {
        return Err(CliError::config("sweep needs at least one value"));
    }
    Ok((axis, values))
}

fn write_out(
    emit: impl FnOnce(&mut dyn Write) -> Result<(), CliError>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    match out {
        Some(path) => {
            let mut file = std::fs::File::create(path).map_err(|e| {
                CliError::config(format!("cannot create output {}: {e}", path.display()))
            })?;
            emit(&mut file)
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            emit(&mut lock)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = thread_hint();
    let format = match cli.format {
        OutputFormat::Csv => Format::Csv,
        OutputFormat::Json => Format::Json,
    };

    match &cli.command {
        Command::Simulate { config } => {
            let cfg = ExperimentConfig::load(config)?;
            let seed = cli.seed.unwrap_or(cfg.seed);
            let report = commands::run_experiment(&cfg, seed, threads)?;
            let out = cli
                .out
                .clone()
                .or_else(|| cfg.output.clone().map(PathBuf::from));
            write_out(|w| report.write(format, w), out.as_deref())
        }
        Command::SweepHashes {
            config,
            q,
            families,
        } => {
            let cfg = ExperimentConfig::load(config)?;
            let seed = cli.seed.unwrap_or(cfg.seed);
            let families = families
                .iter()
                .map(|f| config::parse_family(f))
                .collect::<Result<Vec<HashFamily>, CliError>>()?;
            let report = commands::sweep_hashes(&cfg, seed, q, &families, threads)?;
            let out = cli
                .out
                .clone()
                .or_else(|| cfg.output.clone().map(PathBuf::from));
            write_out(|w| report.write(format, w), out.as_deref())
        }
        Command::CostModel { config, sweeps } => {
            let cfg = ExperimentConfig::load(config)?;
            let sweeps = sweeps
                .iter()
                .map(|s| parse_sweep_arg(s))
                .collect::<Result<Vec<_>, CliError>>()?;
            let report = commands::cost_report(&cfg, &sweeps)?;
            let out = cli
                .out
                .clone()
                .or_else(|| cfg.output.clone().map(PathBuf::from));
            write_out(|w| report.write(format, w), out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

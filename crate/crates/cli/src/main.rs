//! `nlthresh`: configuration-driven experiments on extinction and
//! propagation thresholds for nonlocal diffusion equations.
//!
//! Every subcommand reads one flat `key = value` config, resolves defaults,
//! writes its tables as CSV into the output directory and finishes with a
//! JSON manifest carrying the sha-256 of the resolved config. Exit code 1
//! flags a validation problem (bad flags, malformed config, inconsistent
//! parameters); exit code 2 flags a numerical guard (window too small,
//! overflow, no wave, ...), i.e. a run that asked the solver for more than
//! the discretization can certify.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::{load_config, ExperimentConfig};
use crate::output::OutDir;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}: {msg}")]
    Config { path: String, line: usize, msg: String },
    #[error(transparent)]
    Core(#[from] nlthresh_core::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Core(e) if e.is_numerical_guard() => "numerical-guard",
            CliError::Core(_) => "validation",
            CliError::Io(_) => "io",
            CliError::Invalid(_) => "validation",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical_guard() => 2,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "nlthresh",
    version,
    about = "Threshold experiments for nonlocal diffusion equations",
    arg_required_else_help = true
)]
struct Cli {
    /// Experiment description, flat `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (default: `out.dir` from the config, else ./out).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for sweep rows; other commands are single-shot.
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    threads: usize,
    /// Progress notes on stderr.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Fourier transform, small-frequency expansion, moments and
    /// large-deviation tables for the configured kernel.
    AnalyzeKernel,
    /// Convolution-power tail masses over the (order, level) lattice, with
    /// every applicable analytic bound beside the measured value.
    Tails,
    /// Extinction and propagation certificates over the (eps, level) lattice.
    CheckCriteria,
    /// One plateau initial-value run with its trajectory and verdict.
    Simulate,
    /// Bracket the extinction and propagation half-widths at one height.
    FindThreshold,
    /// Threshold brackets for each configured height, plus scaling-law fits.
    Sweep,
    /// Traveling wave extraction, residual and sliding sub-solution check.
    Wave,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::AnalyzeKernel => "analyze-kernel",
            Command::Tails => "tails",
            Command::CheckCriteria => "check-criteria",
            Command::Simulate => "simulate",
            Command::FindThreshold => "find-threshold",
            Command::Sweep => "sweep",
            Command::Wave => "wave",
        }
    }
}

fn run(cli: &Cli) -> Result<PathBuf, CliError> {
    let config_path = cli.config.as_ref().ok_or_else(|| {
        CliError::Invalid("missing required flag --config PATH".to_string())
    })?;
    if cli.threads == 0 {
        return Err(CliError::Invalid("--threads must be at least 1".to_string()));
    }
    let cfg: ExperimentConfig = load_config(config_path)?;
    let out_path = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    let mut out = OutDir::create(&out_path, cli.command.name(), &cfg)?;
    if cli.verbose {
        eprintln!(
            "nlthresh {}: config {} (sha256 {}), writing to {}",
            cli.command.name(),
            config_path.display(),
            out.sha(),
            out_path.display()
        );
    }
    match cli.command {
        Command::AnalyzeKernel => commands::analyze_kernel(&cfg, &mut out)?,
        Command::Tails => commands::tails(&cfg, &mut out)?,
        Command::CheckCriteria => commands::check_criteria(&cfg, &mut out)?,
        Command::Simulate => commands::simulate(&cfg, &mut out)?,
        Command::FindThreshold => commands::find_threshold(&cfg, &mut out)?,
        Command::Sweep => commands::sweep(&cfg, cli.threads, cli.verbose, &mut out)?,
        Command::Wave => commands::wave(&cfg, &mut out)?,
    }
    out.finish(&cfg)?;
    Ok(out_path)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests print to stdout and succeed; real
            // usage errors (unknown command, bad flag) print usage and fail.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(err) => {
            let report = serde_json::json!({
                "error": err.to_string(),
                "kind": err.kind(),
                "exit_code": err.exit_code(),
            });
            eprintln!("{report}");
            if let Some(dir) = cli.out.as_deref() {
                if dir.is_dir() {
                    let _ = std::fs::write(
                        dir.join("error.json"),
                        format!("{report:#}\n"),
                    );
                }
            }
            ExitCode::from(err.exit_code())
        }
    }
}

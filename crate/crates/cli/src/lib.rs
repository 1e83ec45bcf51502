//! Command-line driver: configuration, subcommands and file export.

pub mod config;
pub mod output;
pub mod run;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::{parse_config, parse_config_str, ProblemConfig};
pub use run::{run, RunOptions};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },

    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("invalid config ({} violation(s)):\n  - {}", .0.len(), .0.join("\n  - "))]
    Invalid(Vec<String>),

    #[error("{operation}: {source}")]
    Core { operation: &'static str, source: pointwise_ocp::Error },

    #[error("{operation} did not converge ({detail}); partial results were written")]
    NotConverged { operation: &'static str, detail: String },

    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
}

fn is_solver_failure(e: &pointwise_ocp::Error) -> bool {
    use pointwise_ocp::Error as E;
    match e {
        E::NoConvergence { .. } | E::SingularMatrix { .. } | E::NonlinearityEvaluation { .. } => true,
        E::Optimization { source, .. } | E::AtLevel { source, .. } => is_solver_failure(source),
        _ => false,
    }
}

impl CliError {
    pub(crate) fn core(operation: &'static str, source: pointwise_ocp::Error) -> Self {
        CliError::Core { operation, source }
    }

    /// 1 for invalid input, 2 for solver failure, 3 for I/O failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Invalid(_) => 1,
            CliError::Core { source, .. } if is_solver_failure(source) => 2,
            CliError::Core { source: pointwise_ocp::Error::Io(_), .. } => 3,
            CliError::Core { .. } => 1,
            CliError::NotConverged { .. } => 2,
            CliError::Read { .. } | CliError::Write { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Solve the state equation for the fixed control.
    SolveState,
    /// Solve state and adjoint for the fixed control.
    SolveAdjoint,
    /// Run the projected-gradient optimizer and check optimality.
    Optimize,
    /// Compare the reduced gradient with central differences.
    CheckGradient,
    /// Compare the reduced Hessian with second differences.
    CheckHessian,
    /// Manufactured-solution convergence study.
    Convergence,
    /// Stability, adjoint singularity, second-order and control-regularity probes.
    Diagnose,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SolveState => "solve-state",
            Command::SolveAdjoint => "solve-adjoint",
            Command::Optimize => "optimize",
            Command::CheckGradient => "check-gradient",
            Command::CheckHessian => "check-hessian",
            Command::Convergence => "convergence",
            Command::Diagnose => "diagnose",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pwocp", version, about = "Bilinear optimal control with pointwise tracking on P1 meshes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON problem configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    pub quiet: bool,
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let Some(config_path) = cli.config.as_deref() else {
        eprintln!("error: --config <path> is required");
        return 1;
    };
    let result = parse_config(config_path).and_then(|mut config| {
        if let Some(seed) = cli.seed {
            config.optimizer.seed = seed;
        }
        run(cli.command, &config, &cli.out, RunOptions { quiet: cli.quiet })
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {} failed: {e}", cli.command.name());
            e.exit_code()
        }
    }
}

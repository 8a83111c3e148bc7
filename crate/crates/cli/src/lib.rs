//! Command-line experiment harness: solver benchmarks, gradient validation,
//! GP calibration, null-space demos and the invariant check run.

use std::ffi::OsString;
use std::process::ExitCode;

use clap::Parser;
use thiserror::Error;

use lsqdiff::solvers::Precision;

pub mod args;
pub mod commands;
pub mod fault;
pub mod manifest;
pub mod props;

use args::{Cli, Command};
use manifest::RunManifest;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] lsqdiff::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn configure_threads(jobs: Option<usize>) -> Result<(), CliError> {
    match jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        #[cfg(feature = "parallel")]
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure {n} worker threads: {e}"))),
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(()),
        None => Ok(()),
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    configure_threads(cli.common.jobs)?;
    if cli.common.precision == Some(Precision::Single) && !matches!(cli.command, Command::BenchSolvers(_)) {
        return Err(CliError::Usage("--precision single is only supported by bench-solvers".into()));
    }
    let mut manifest = RunManifest::start(cli);
    let common = &cli.common;
    match &cli.command {
        Command::BenchSolvers(a) => commands::solvers::run(common, a, &mut manifest),
        Command::BenchGrad(a) => commands::grad::run(common, a, &mut manifest),
        Command::GpCalibrate(a) => commands::gp::run(common, a, &mut manifest),
        Command::NsmDemo(a) => commands::nsm::run(common, a, &mut manifest),
        Command::Check(a) => commands::check::run(common, a),
    }
}

/// Parses `args` (including the program name) and runs the selected subcommand.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lsqdiff: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

//! `nhlz`: scenario-driven runs of the driven non-Hermitian two-level model.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error (nothing is
//! written), 3 numerical failure (only `diagnostic.json` is written).

mod commands;
mod output;
mod scenario;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use thiserror::Error;

use crate::output::Bundle;
use crate::scenario::Overrides;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {message}")]
    Numeric { message: String, detail: Value },
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric { .. } => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "nhlz", version, about = "Non-adiabatic transitions through exceptional points")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one trajectory; writes trajectory.csv and summary.json.
    Simulate(Args),
    /// Numeric, piecewise and closed-form final populations side by side.
    Compare(Args),
    /// Print exceptional points, regions and transition points as JSON.
    Eps(Args),
    /// Cross-check the series and quadrature forms for a parabolic drive.
    AppendixCheck(Args),
    /// Print the effective two-level drive of a lattice as JSON.
    LatticeMap(Args),
    /// Propagate the lattice wavepacket; writes site and projected CSVs.
    LatticeRun(Args),
    /// Parallel grid of EP counts and final populations.
    Sweep(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory. Printing commands also write their JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for random initial states.
    #[arg(long)]
    seed: Option<u64>,
    /// Relative integration tolerance; for appendix-check, the agreement
    /// tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

const DEFAULT_OUT: &str = "out";

fn print_and_keep(value: &Value, name: &str, out: Option<&Path>) -> Result<(), CliError> {
    // A closed pipe on stdout (`| head`) is not an error worth reporting.
    let _ = std::io::stdout().write_all(&output::json(value));
    if let Some(dir) = out {
        let mut b = Bundle::default();
        b.add(name, output::json(value));
        b.write(dir)?;
    }
    Ok(())
}

fn run(cmd: &Command) -> Result<(), CliError> {
    let (Command::Simulate(a)
    | Command::Compare(a)
    | Command::Eps(a)
    | Command::AppendixCheck(a)
    | Command::LatticeMap(a)
    | Command::LatticeRun(a)
    | Command::Sweep(a)) = cmd;
    // The scenario's own tolerance stays in force for appendix-check; `--tol`
    // there sets the agreement threshold instead.
    let tol = match cmd {
        Command::AppendixCheck(_) => None,
        _ => a.tol,
    };
    if let Some(t) = a.tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::Config("--tol must be positive".into()));
        }
    }
    let resolved = scenario::load(&a.config, Overrides { seed: a.seed, tol })?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let with_diagnostic = |r: Result<Bundle, CliError>| -> Result<(), CliError> {
        let bundle = r.map_err(|e| record_failure(e, &out))?;
        for p in bundle.write(&out)? {
            eprintln!("wrote {}", p.display());
        }
        Ok(())
    };
    match cmd {
        Command::Simulate(_) => with_diagnostic(commands::simulate(&resolved)),
        Command::Compare(_) => with_diagnostic(commands::compare(&resolved)),
        Command::LatticeRun(_) => with_diagnostic(commands::lattice_run(&resolved)),
        Command::Sweep(_) => with_diagnostic(commands::sweep(&resolved)),
        Command::Eps(_) => print_and_keep(&commands::eps(&resolved)?, "eps.json", a.out.as_deref()),
        Command::LatticeMap(_) => print_and_keep(&commands::lattice_map(&resolved)?, "lattice_map.json", a.out.as_deref()),
        Command::AppendixCheck(_) => {
            let report = commands::appendix_check(&resolved, a.tol.unwrap_or(1e-6)).map_err(|e| match a.out.as_deref() {
                Some(dir) => record_failure(e, dir),
                None => e,
            })?;
            print_and_keep(&report, "appendix_check.json", a.out.as_deref())
        }
    }
}

/// Writes `diagnostic.json` for numerical failures; other errors pass
/// through untouched so that configuration errors leave no files behind.
fn record_failure(err: CliError, dir: &Path) -> CliError {
    if let CliError::Numeric { message, detail } = &err {
        let mut b = Bundle::default();
        b.add("diagnostic.json", output::json(&json!({ "error": message, "detail": detail })));
        if let Err(io) = b.write(dir) {
            eprintln!("{io}");
        }
    }
    err
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nhlz: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

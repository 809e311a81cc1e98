//! `doobmeyer`: batch experiment runner over declarative model files.
//!
//! Exit codes: 0 when every check passes, 1 when a mathematical check
//! fails, 2 for input, validation, domain or resource errors.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use doob_core::mc::CondExpEstimator;
use doob_core::Error;

mod commands;
mod output;

pub use output::fmt_f64;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Parser)]
#[command(name = "doobmeyer", version, about = "Exact and Monte Carlo Doob decompositions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decompose a path-space model into compensator and martingale.
    Decompose(DecomposeArgs),
    /// Run the decomposition, uniqueness, naturality and tail-bound suites.
    Verify(VerifyArgs),
    /// Refinement study over nested dyadic grids.
    Converge(ConvergeArgs),
    /// Predictable-versus-natural audit of random increasing processes.
    Audit(AuditArgs),
    /// Validate a model and print it in canonical form.
    DumpModel(DumpArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Model file (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Absolute tolerance for every invariant check.
    #[arg(long, default_value_t = DEFAULT_TOL, value_parser = parse_tol)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Tail-bound levels, strictly increasing and positive.
    #[arg(long, default_value = "1,2,4,8", value_parser = parse_levels)]
    pub levels: Levels,
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dyadic depth range `a..b` (inclusive) or a single depth.
    #[arg(long, value_parser = parse_depths)]
    pub depths: Depths,
    /// Monte Carlo paths per grid.
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    /// Required for Monte Carlo models.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "analytic", value_parser = parse_estimator)]
    pub estimator: CondExpEstimator,
    /// Lagged states in the residual martingale regression.
    #[arg(long, default_value_t = 1)]
    pub lags: usize,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// File to write; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Levels(pub Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Depths {
    pub min: u32,
    pub max: u32,
}

fn parse_tol(s: &str) -> Result<f64, String> {
    let tol: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if tol > 0.0 && tol.is_finite() {
        Ok(tol)
    } else {
        Err(format!("tolerance must be positive and finite, got {s}"))
    }
}

fn parse_levels(s: &str) -> Result<Levels, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("level '{p}': {e}")))
        .collect::<Result<Vec<_>, _>>()
        .map(Levels)
}

fn parse_depths(s: &str) -> Result<Depths, String> {
    let num = |p: &str| p.trim().parse::<u32>().map_err(|e| format!("depth '{p}': {e}"));
    match s.split_once("..") {
        Some((a, b)) => Ok(Depths { min: num(a)?, max: num(b)? }),
        None => num(s).map(|d| Depths { min: d, max: d }),
    }
}

fn parse_estimator(s: &str) -> Result<CondExpEstimator, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A failed run: either bad input (exit 2) or a failed check (exit 1).
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Check(_) => EXIT_CHECK_FAILED,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Check(m) => write!(f, "check failed: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NotSubmartingale { .. }
            | Error::NotMartingale { .. }
            | Error::NonMonotone { .. }
            | Error::MalformedDecomposition { .. }
            | Error::Consistency(_) => CliError::Check(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

pub fn execute(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Decompose(a) => commands::decompose(&a),
        Command::Verify(a) => commands::verify(&a),
        Command::Converge(a) => commands::converge(&a),
        Command::Audit(a) => commands::audit(&a),
        Command::DumpModel(a) => commands::dump_model(&a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_PASS };
        }
    };
    match execute(cli) {
        Ok(Outcome::Pass) => EXIT_PASS,
        Ok(Outcome::Fail) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

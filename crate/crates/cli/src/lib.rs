//! `clusterre` command line: scenario files in, tables and CSV files out.
//!
//! Exit codes: 0 success, 1 failed validation gate or numerical failure,
//! 2 bad arguments, config or violated model hypothesis.

pub mod commands;
pub mod config;
pub mod contract_spec;
pub mod output;
pub mod validate;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{ConfigError, ScenarioConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_GATE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "clusterre", version, about = "Reinsurance of clustered losses under a marked Hawkes model")]
struct Cli {
    /// Scenario file (TOML).
    #[arg(short, long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate loss paths and write per-path totals.
    Simulate {
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write every event to events.csv.
        #[arg(long)]
        dump_events: bool,
    },
    /// Tabulate m(t), m2(t) and M(t), and print M, A, B at the horizon.
    Moments {
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Closed-form criterion for one contract, with Monte Carlo when paths are set.
    Evaluate {
        /// zero | full | deductible:A | proportional:K | three-piece:A,B | tabulated:Z=V,...
        #[arg(long)]
        contract: Option<String>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve for the optimal three-piece contract.
    Optimize,
    /// Re-solve the optimum along a decreasing grid of impact scales.
    Sweep {
        /// Comma-separated, strictly decreasing.
        #[arg(long, value_name = "LIST")]
        lambda_grid: Option<String>,
    },
    /// Run the oracle suite; exits 1 if any gate fails.
    Validate {
        #[arg(long)]
        fast: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Usage(String),
    Model(clusterre::Error),
    Io(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_CONFIG,
            CliError::Model(e) => match e {
                clusterre::Error::InvalidParameter { .. }
                | clusterre::Error::NotErgodic { .. }
                | clusterre::Error::Hypothesis(_)
                | clusterre::Error::InvalidContract(_)
                | clusterre::Error::HorizonMismatch { .. } => EXIT_CONFIG,
                _ => EXIT_GATE,
            },
            CliError::Io(_) => EXIT_GATE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Model(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<clusterre::Error> for CliError {
    fn from(e: clusterre::Error) -> Self {
        CliError::Model(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = dispatch(cli);
    commands::flush_stdout();
    match outcome {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_GATE,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool, CliError> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Usage("a scenario file is required (--config FILE)".into()))?;
    let cfg = ScenarioConfig::load(&path)?;
    match cli.command {
        Command::Simulate { paths, seed, dump_events } => commands::simulate(&cfg, paths, seed, dump_events)?,
        Command::Moments { grid } => commands::moments(&cfg, grid)?,
        Command::Evaluate { contract, paths, seed } => commands::evaluate(&cfg, contract.as_deref(), paths, seed)?,
        Command::Optimize => commands::optimize(&cfg)?,
        Command::Sweep { lambda_grid } => {
            let grid = lambda_grid
                .map(|g| commands::parse_lambda_grid(&g).map_err(|m| CliError::Usage(format!("--lambda-grid: {m}"))))
                .transpose()?;
            commands::sweep(&cfg, grid)?
        }
        Command::Validate { fast, seed } => return validate::validate(&cfg, seed, fast),
    }
    Ok(true)
}

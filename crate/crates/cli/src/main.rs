//! `admctl`: admission-control analyses from a scenario file.
//!
//! Exit codes: 0 success, 1 internal failure, 2 invalid input, 3 model too
//! large. `ADMCTL_THREADS` caps the worker threads used by sweeps and batch
//! simulation.

mod commands;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use admission_core::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(version, about = "Admission control for inelastic flows sharing a link with a deadline-driven transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Scenario file (TOML)
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Also write a JSON mirror of every table
    #[arg(long)]
    pub json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Deadline risk and progress envelopes at fixed elastic rates
    Risk {
        #[command(flatten)]
        common: Common,
        /// Rates in Mbps; defaults to the slowest and fastest action rates
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
    },
    /// Optimal policy and cost decomposition
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Cost of a policy file
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: PathBuf,
    },
    /// Monte Carlo trajectories under a policy (optimal if none is given)
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of individual trajectories to write out
        #[arg(long, default_value_t = 1)]
        traces: usize,
    },
    /// Re-solve for each inelastic weight
    SweepLambda {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
    },
    /// Rate-bound postures evaluated under the scenario's true-model overrides
    SweepRatebound {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        /// Extra true bandwidths, in addition to the scenario's overrides
        #[arg(long, value_delimiter = ',')]
        true_bandwidth: Vec<f64>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Input(String),
    Io(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::Capacity { .. }) => 3,
            CliError::Core(Error::InfiniteExpectation { .. }) => 1,
            CliError::Core(_) | CliError::Input(_) => 2,
            CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Input(msg) | CliError::Io(msg) => f.write_str(msg),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("ADMCTL_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Input(format!("ADMCTL_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Io(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Risk { common, grid } => commands::risk(&common, &grid),
        Command::Solve { common } => commands::solve(&common),
        Command::Evaluate { common, policy } => commands::evaluate(&common, &policy),
        Command::Simulate {
            common,
            policy,
            count,
            seed,
            traces,
        } => commands::simulate(&common, policy.as_deref(), count, seed, traces),
        Command::SweepLambda { common, grid } => commands::sweep_lambda(&common, &grid),
        Command::SweepRatebound {
            common,
            grid,
            true_bandwidth,
        } => commands::sweep_ratebound(&common, &grid, &true_bandwidth),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("admctl: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

//! `aloha`: command-line front end.
//!
//! Every subcommand reads an optional JSON config (`--config`), applies the
//! flag overrides, prints a JSON document to stdout and, when `--out` is
//! given, writes the command's CSV (or triplet listing for `oracle`) there.
//!
//! Exit status: 0 on success, 2 on invalid input, 1 on runtime failure.
//! `ALOHA_THREADS` caps the worker pool.

use std::path::PathBuf;
use std::process::ExitCode;

use aloha_core::harness::{self, Command, ConfigFile, ExperimentConfig, Overrides};
use aloha_core::AlohaError;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "aloha", version, about = "Recurrence analysis of finite-user slotted Aloha networks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Classify the configured network as recurrent, transient or undecided.
    Classify,
    /// Search for an attempt vector putting the rates inside the inner region.
    Witness,
    /// Simulate one trajectory.
    Simulate,
    /// Estimate the return time to the empty state.
    ReturnTimes,
    /// Estimate the Lyapunov trace and its drift statistic.
    Lyapunov,
    /// Estimate the probability of never emptying from a large start state.
    Escape,
    /// Exact expected return time on a truncated state space.
    Oracle,
    /// Scan a grid of arrival rates for inner-region witnesses.
    RegionScan,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Classify => Command::Classify,
            Cmd::Witness => Command::Witness,
            Cmd::Simulate => Command::Simulate,
            Cmd::ReturnTimes => Command::ReturnTimes,
            Cmd::Lyapunov => Command::Lyapunov,
            Cmd::Escape => Command::Escape,
            Cmd::Oracle => Command::Oracle,
            Cmd::RegionScan => Command::RegionScan,
        }
    }
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Where to write the CSV table (or triplets for `oracle`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    horizon: Option<u64>,
    #[arg(long, global = true)]
    replications: Option<u64>,
    /// Rate grid, e.g. `diag2:0.05,0.1` or `0.1..0.5/5;0.2,0.3`.
    #[arg(long, global = true)]
    grid: Option<String>,
    /// Per-queue cap of the truncated chain.
    #[arg(long, global = true)]
    truncation: Option<u64>,
    /// Witness search convergence tolerance.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    /// Arrival rates for `witness`, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    /// Witness search grid points per axis.
    #[arg(long, global = true)]
    grid_points: Option<usize>,
    /// Witness search random starts (more than three users).
    #[arg(long, global = true)]
    random_starts: Option<usize>,
    /// Witness search maximum coordinate sweeps.
    #[arg(long, global = true)]
    max_iterations: Option<usize>,
    /// Trace length for `lyapunov`.
    #[arg(long, global = true)]
    n_max: Option<u64>,
    /// Start state, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    init: Option<Vec<u64>>,
}

enum Failure {
    Input(String),
    Runtime(String),
}

impl From<AlohaError> for Failure {
    fn from(e: AlohaError) -> Self {
        if e.is_validation() {
            Failure::Input(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("ALOHA_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Failure::Input(format!("ALOHA_THREADS={raw:?} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    let c = &cli.common;
    let mut file = match &c.config {
        Some(path) => {
            let text = std::fs::read(path)
                .map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
            harness::parse_config(&text)?.file
        }
        None => ConfigFile::default(),
    };
    Overrides {
        seed: c.seed,
        horizon: c.horizon,
        replications: c.replications,
        grid: c.grid.clone(),
        truncation: c.truncation,
        tolerance: c.tolerance,
        grid_points: c.grid_points,
        random_starts: c.random_starts,
        max_iterations: c.max_iterations,
        n_max: c.n_max,
        init: c.init.clone(),
    }
    .apply(&mut file);
    let cfg = ExperimentConfig::from_file(file)?;
    let output = harness::run(cli.command.into(), &cfg, c.lambda.as_deref())?;
    if let (Some(path), Some(artifact)) = (&c.out, &output.artifact) {
        std::fs::write(path, artifact)
            .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    print!("{}", output.json);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

//! `sovrisk` command-line front-end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data
//! validation or I/O error, 3 numerical failure (including a replay whose
//! artifacts differ from the recorded ones).

mod commands;
mod config;
mod run;
mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sovrisk::error::ErrorKind;
use thiserror::Error;

use config::Config;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] sovrisk::Error),
}

macro_rules! from_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}

from_core!(
    sovrisk::panel::PanelError,
    sovrisk::models::ModelError,
    sovrisk::harness::HarnessError,
    sovrisk::attribution::AttributionError,
    sovrisk::connect::ConnectError
);

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) | CliError::Io { .. } => 2,
            CliError::Numerical(_) => 3,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Validation | ErrorKind::Io => 2,
                ErrorKind::Numerical => 3,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sovrisk", version, about = "Sovereign-risk horse races, tree Shapley attribution and connectedness")]
struct Cli {
    /// Worker threads (default: logical CPUs).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML configuration file with flat dotted keys.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a key, e.g. `--set plan.buffer=28`. Repeatable; wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Shorthand for `--set output.dir=<DIR>`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic panel and its ground-truth components.
    Synth(RunArgs),
    /// Smooth and standardize a panel.
    Preprocess(RunArgs),
    /// Recursive out-of-sample backtest of every model family.
    Horserace(RunArgs),
    /// Fit one tree model and write its Shapley attribution cube and summaries.
    Explain(RunArgs),
    /// Rolling spillover index and network density from an attribution cube.
    Connect(RunArgs),
    /// Recompute metric tables and plots from a forecast ledger.
    Report(RunArgs),
    /// Re-run a recorded run from its manifest and compare artifacts.
    Replay {
        /// Run directory containing manifest.json.
        run_dir: PathBuf,
    },
    /// Print the fully resolved configuration.
    Config(RunArgs),
}

fn load(args: &RunArgs) -> Result<Config, CliError> {
    let mut sets = args.sets.clone();
    if let Some(o) = &args.out {
        sets.push(format!("output.dir=\"{}\"", o.display()));
    }
    Config::load(args.config.as_deref(), &sets)
}

fn execute(cmd: &Command) -> Result<(), CliError> {
    let (name, args) = match cmd {
        Command::Synth(a) => ("synth", a),
        Command::Preprocess(a) => ("preprocess", a),
        Command::Horserace(a) => ("horserace", a),
        Command::Explain(a) => ("explain", a),
        Command::Connect(a) => ("connect", a),
        Command::Report(a) => ("report", a),
        Command::Config(a) => {
            let cfg = load(a)?;
            let text = serde_json::to_string_pretty(&cfg.to_json()).map_err(|e| CliError::Usage(e.to_string()))?;
            println!("{text}");
            return Ok(());
        }
        Command::Replay { run_dir } => {
            let (out, diffs) = commands::replay(run_dir)?;
            println!("{}", out.display());
            if diffs.is_empty() {
                eprintln!("replay identical");
                return Ok(());
            }
            return Err(CliError::Numerical(format!("replay differs: {}", diffs.join("; "))));
        }
    };
    let cfg = load(args)?;
    let dir = commands::dispatch(name, &cfg)?;
    println!("{}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let jobs = cli.jobs.unwrap_or(0);
    let result = if jobs > 0 { sovrisk::par::with_threads(jobs, || execute(&cli.command)) } else { execute(&cli.command) };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

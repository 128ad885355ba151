//! The `replimarket` command line: one subcommand per pipeline stage.
//!
//! ```text
//! replimarket ingest --synthetic training       # or: ingest train.csv test.csv
//! replimarket tune --set grid.base_radius=[0.6,1.3]
//! replimarket train --set train.genome.base_radius=1.3
//! replimarket simulate --mode artificial
//! replimarket evaluate
//! replimarket serve                             # REPLIMARKET_BIND, REPLIMARKET_JOURNAL_DIR
//! replimarket replay out/journal/journal.jsonl
//! ```
//!
//! Every command writes its resolved config as `<command>.config.toml` into
//! the output directory. Exit codes: 0 ok, 2 config, 3 data, 4 runtime.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use replimarket::eval::EvalError;
use replimarket::evolution::TrainError;
use replimarket::features::FeatureError;
use replimarket::Mode;
use replimarket_service::ServiceError;
use thiserror::Error;

pub use config::{Config, DataConfig, Overrides, SyntheticCorpus};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }

    pub(crate) fn input(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::Corpus(_) | TrainError::Json(_) => CliError::Data(e.to_string()),
            TrainError::Agent(_) | TrainError::Io(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::InvalidEvent(_) | ServiceError::UnknownClaim(_) => {
                CliError::Config(format!("event: {e}"))
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "replimarket",
    version,
    about = "Hybrid replication prediction markets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML config file; missing keys keep their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.generations=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Seed for training and simulation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    /// Ticks per simulated or live market.
    #[arg(long, global = true)]
    pub ticks: Option<u64>,
    /// Output directory; later stages read earlier stages' files from here.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read raw claim files, fit the scaler on the training set and store normalized sets.
    Ingest {
        /// Raw training claims (csv or jsonl); defaults to `data.train`.
        train: Option<PathBuf>,
        /// Raw test claims; defaults to `data.test`.
        test: Option<PathBuf>,
        #[arg(long, value_enum)]
        synthetic: Option<SyntheticCorpus>,
    },
    /// Evolve an agent population and save it as `market.json`.
    Train,
    /// Grid-search training hyperparameters under the plausibility gate.
    Tune,
    /// Run batch markets on the test claims.
    Simulate,
    /// Score run summaries against outcomes.
    Evaluate {
        /// Score the recorded closing prices of the 30 held-out markets.
        #[arg(long)]
        reference: bool,
    },
    /// Run the live trading service.
    Serve {
        #[arg(long, env = "REPLIMARKET_BIND", default_value = "127.0.0.1:8080")]
        bind: String,
        /// Defaults to `<out>/journal`.
        #[arg(long, env = "REPLIMARKET_JOURNAL_DIR")]
        journal_dir: Option<PathBuf>,
    },
    /// Rebuild event state from a journal without modifying it.
    Replay { journal: PathBuf },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Train => "train",
            Command::Tune => "tune",
            Command::Simulate => "simulate",
            Command::Evaluate { .. } => "evaluate",
            Command::Serve { .. } => "serve",
            Command::Replay { .. } => "replay",
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        set: cli.set,
        seed: cli.seed,
        mode: cli.mode,
        ticks: cli.ticks,
    };
    let config = Config::resolve(cli.config.as_deref(), &overrides)?;
    config.record(&cli.out, cli.command.name())?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Ingest {
            train,
            test,
            synthetic,
        } => commands::ingest(&config, out, train, test, synthetic),
        Command::Train => commands::train(&config, out),
        Command::Tune => commands::tune(&config, out),
        Command::Simulate => commands::simulate(&config, out),
        Command::Evaluate { reference } => commands::evaluate(&config, out, reference),
        Command::Serve { bind, journal_dir } => {
            let dir = journal_dir.unwrap_or_else(|| out.join("journal"));
            commands::serve(&config, out, &bind, &dir)
        }
        Command::Replay { journal } => commands::replay(&config, out, &journal),
    }
}

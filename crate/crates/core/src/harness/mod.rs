//! Episode runner, idleness / collision / battery metrics, aggregation,
//! run configuration and the files a run writes.

mod aggregate;
mod config;
mod episode;
mod events;
mod report;

use thiserror::Error;

use crate::baselines::StrategyError;
use crate::env::EnvError;
use crate::map::MapError;
use crate::mappo::MappoError;
use crate::nn::NnError;

pub use aggregate::{aggregate, mean_std, Aggregate, Stat};
pub use config::{Config, EnvConfig, EvalConfig, StrategyConfig, StrategyKind};
pub use episode::{build_controller, run_episode, EpisodeMetrics, EpisodeResult, EpisodeSpec, Recording};
pub use events::{parse_event_log, recompute_idleness_metrics, EventLine};
pub use report::{compare_markdown, evaluate, write_run, CompareRow, RunOutcome, RunReport, WriteOptions};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("horizon {horizon} with burn-in {burnin} leaves no steps to measure")]
    InvalidHorizon { horizon: usize, burnin: usize },
    #[error("need at least 2 samples, got {0}")]
    InsufficientSamples(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed event log line {line}: {message}")]
    EventLog { line: usize, message: String },
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Mappo(#[from] MappoError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("i/o: {0}")]
    Io(String),
}

impl HarnessError {
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::InvalidHorizon { .. } => "InvalidHorizon",
            HarnessError::InsufficientSamples(_) => "InsufficientSamples",
            HarnessError::Config(_) => "ConfigError",
            HarnessError::EventLog { .. } => "EventLogError",
            HarnessError::Map(e) => e.kind(),
            HarnessError::Env(_) => "EnvError",
            HarnessError::Strategy(e) => e.kind(),
            HarnessError::Mappo(e) => e.kind(),
            HarnessError::Nn(e) => e.kind(),
            HarnessError::Io(_) => "IoError",
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

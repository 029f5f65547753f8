//! Multi-agent PPO with learned discrete messages.
//!
//! Every agent shares one actor. Each step an agent first samples a message
//! from the actor's message head (which never sees this step's messages),
//! then samples a move conditioned on everyone's messages. Both choices are
//! trained with one clipped surrogate over the joint probability
//! `p(m|s) * p(a|s,m)`; the message has no reward of its own and learns only
//! through that shared signal. A feed-forward critic scores the global state.

mod config;
mod gae;
mod loss;
mod policy;
mod rollout;
mod trainer;
mod update;

use thiserror::Error;

use crate::env::EnvError;
use crate::nn::NnError;
use crate::observe::ObserveError;

pub use config::{CurriculumStage, LrSchedule, TrainConfig};
pub use gae::compute_gae;
pub use loss::{clipped_surrogate, joint_ratio, Surrogate};
pub use policy::RlController;
pub use rollout::{collect_rollouts, reconstruct_offline_segments, AgentTrack, Lane, LaneSpec, RolloutBuffer, RolloutContext, Snapshot, StepRecord};
pub use trainer::{IterationMetrics, Trainer};
pub use update::{chunk_refs, loss_and_gradients, update, ChunkRef, LossParts, UpdateStats};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MappoError {
    #[error("sequence lengths differ: {rewards} rewards vs {values} values")]
    LengthMismatch { rewards: usize, values: usize },
    #[error("probability {0} is not in (0, 1]")]
    ZeroProbability(f64),
    #[error("non-finite loss; offending batch: {dump}")]
    NonFiniteLoss { dump: String },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Observe(#[from] ObserveError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("i/o: {0}")]
    Io(String),
}

impl MappoError {
    pub fn kind(&self) -> &'static str {
        match self {
            MappoError::LengthMismatch { .. } => "LengthMismatch",
            MappoError::ZeroProbability(_) => "ZeroProbability",
            MappoError::NonFiniteLoss { .. } => "NonFiniteLoss",
            MappoError::InvalidConfig(_) => "InvalidConfig",
            MappoError::Env(_) => "EnvError",
            MappoError::Observe(_) => "ObserveError",
            MappoError::Nn(e) => e.kind(),
            MappoError::Io(_) => "IoError",
        }
    }
}

impl From<std::io::Error> for MappoError {
    fn from(e: std::io::Error) -> Self {
        MappoError::Io(e.to_string())
    }
}

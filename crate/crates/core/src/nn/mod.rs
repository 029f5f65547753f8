//! Small reverse-mode network kernel: 3x3 convolutions, dense layers, tanh,
//! a gated recurrent cell and categorical heads, with hand-written
//! backward passes over flat parameter vectors.

mod checkpoint;
pub mod dist;
pub mod layers;
mod net;
mod optim;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Manifest, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dist::{masked_softmax, renormalize, softmax};
pub use net::{ActorNet, ActorOutput, ActorTape, ArchConfig, CriticCache, CriticNet, InputShape, NetInput, ParamLayout, TensorInfo};
pub use optim::{Adam, AdamParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("every action is masked out")]
    AllActionsMasked,
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(String),
    #[error("backward called without a recorded forward pass")]
    NoRecordedForward,
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("{height}x{width} map is too small for {convs} unpadded 3x3 convolutions")]
    MapTooSmall { height: usize, width: usize, convs: usize },
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
}

impl NnError {
    pub fn kind(&self) -> &'static str {
        match self {
            NnError::AllActionsMasked => "AllActionsMasked",
            NnError::NonFiniteActivation(_) => "NonFiniteActivation",
            NnError::NoRecordedForward => "NoRecordedForward",
            NnError::ShapeMismatch { .. } => "ShapeMismatch",
            NnError::MapTooSmall { .. } => "MapTooSmall",
            NnError::InvalidArch(_) => "InvalidArch",
            NnError::Checkpoint(_) => "CheckpointError",
        }
    }
}

/// Dense tensor with a shape; values must be finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(NnError::ShapeMismatch {
                expected: shape,
                got: vec![values.len()],
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteActivation(format!("tensor value {bad}")));
        }
        Ok(Self { shape, values })
    }
}

/// Actor and critic with their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub arch: ArchConfig,
    pub shape: InputShape,
    pub actor: ActorNet,
    pub critic: CriticNet,
    pub actor_params: Vec<f64>,
    pub critic_params: Vec<f64>,
}

impl PolicyModel {
    pub fn new(arch: &ArchConfig, shape: InputShape, seed: u64) -> Result<Self, NnError> {
        let actor = ActorNet::new(arch, shape)?;
        let critic = CriticNet::new(arch, shape)?;
        let actor_params = actor.layout.init(seed);
        let critic_params = critic.layout.init(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
        Ok(Self {
            arch: arch.clone(),
            shape,
            actor,
            critic,
            actor_params,
            critic_params,
        })
    }
}

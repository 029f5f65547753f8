//! Binary checkpoint format:
//!
//! ```text
//! b"PTCK" | version: u32 LE | manifest_len: u64 LE | manifest JSON | f64 LE blob
//! ```
//!
//! The manifest lists every tensor (`actor.*` then `critic.*`) with its
//! shape and offset into the blob, plus the architecture needed to rebuild
//! the networks.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{ActorNet, ArchConfig, CriticNet, InputShape, TensorInfo};
use super::{NnError, PolicyModel};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub arch: ArchConfig,
    pub shape: InputShape,
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
    /// Training episode the weights were taken at, if any.
    #[serde(default)]
    pub episode: Option<u64>,
}

fn bad(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

fn expected_tensors(actor: &ActorNet, critic: &CriticNet) -> Vec<TensorInfo> {
    let shift = actor.layout.total;
    let prefixed = |prefix: &str, t: &TensorInfo, base: usize| TensorInfo {
        name: format!("{prefix}.{}", t.name),
        shape: t.shape.clone(),
        offset: base + t.offset,
        fan_in: 0,
    };
    actor
        .layout
        .tensors
        .iter()
        .map(|t| prefixed("actor", t, 0))
        .chain(critic.layout.tensors.iter().map(|t| prefixed("critic", t, shift)))
        .collect()
}

pub fn encode_checkpoint(model: &PolicyModel, episode: Option<u64>) -> Vec<u8> {
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        arch: model.arch.clone(),
        shape: model.shape,
        tensors: expected_tensors(&model.actor, &model.critic),
        total: model.actor_params.len() + model.critic_params.len(),
        episode,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 8 * manifest.total);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in model.actor_params.iter().chain(&model.critic_params) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses and fully validates a checkpoint; never panics on malformed input.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(PolicyModel, Manifest), NnError> {
    if bytes.len() < 16 {
        return Err(bad("truncated header"));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let rest = &bytes[16..];
    if len > rest.len() as u64 {
        return Err(bad("manifest length exceeds file"));
    }
    let (json, blob) = rest.split_at(len as usize);
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| bad(format!("manifest: {e}")))?;
    if manifest.version != version {
        return Err(bad("manifest version disagrees with header"));
    }
    let actor = ActorNet::new(&manifest.arch, manifest.shape)?;
    let critic = CriticNet::new(&manifest.arch, manifest.shape)?;
    let total = actor.layout.total + critic.layout.total;
    if manifest.total != total {
        return Err(bad(format!("manifest total {} but architecture needs {total}", manifest.total)));
    }
    if manifest.tensors != expected_tensors(&actor, &critic) {
        return Err(bad("tensor list does not match the architecture"));
    }
    if blob.len() as u64 != total as u64 * 8 {
        return Err(bad(format!("blob holds {} bytes, expected {}", blob.len(), total * 8)));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite parameter"));
    }
    let (a, c) = values.split_at(actor.layout.total);
    let model = PolicyModel {
        arch: manifest.arch.clone(),
        shape: manifest.shape,
        actor,
        critic,
        actor_params: a.to_vec(),
        critic_params: c.to_vec(),
    };
    Ok((model, manifest))
}

pub fn save_checkpoint(path: &Path, model: &PolicyModel, episode: Option<u64>) -> std::io::Result<()> {
    fs::write(path, encode_checkpoint(model, episode))
}

pub fn load_checkpoint(path: &Path) -> Result<(PolicyModel, Manifest), NnError> {
    let bytes = fs::read(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}

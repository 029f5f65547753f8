//! Reward stack: patrol reward with a difference-reward term, battery
//! penalty and collision penalty, plus the idleness normalization shared
//! with the observation encoders.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{AgentStatus, StepOutcome, WorldState};
use crate::map::CellKind;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("idleness must be non-negative, got {0}")]
    NegativeIdleness(f64),
    #[error("idleness vectors differ in length: {0} vs {1}")]
    ShapeMismatch(usize, usize),
    #[error("battery fraction {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("invalid reward parameters: {0}")]
    InvalidParams(&'static str),
}

/// Reward scale factors. `c_pbm` and `c_pbb` are the slope numerator and
/// intercept of the low-battery branch (`m` and `c_rb2` in the published
/// parameter table).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    /// Idleness normalization constant, minutes.
    pub c_norm: f64,
    pub c_rp: f64,
    /// Difference-reward scale. `None` resolves to `50 / max_agents`.
    pub c_d: Option<f64>,
    pub c_pb: f64,
    pub c_pbm: f64,
    pub c_pbb: f64,
    pub c_pc: f64,
    /// Low-battery threshold as a fraction of capacity.
    pub b_l: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            c_norm: 200.0,
            c_rp: 0.5,
            c_d: None,
            c_pb: 50.0,
            c_pbm: 20.0,
            c_pbb: 1.0,
            c_pc: 1.0,
            b_l: 0.135,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<(), RewardError> {
        let scales = [self.c_rp, self.c_pb, self.c_pbm, self.c_pbb, self.c_pc];
        if scales.iter().any(|s| !(*s >= 0.0)) || self.c_d.is_some_and(|c| !(c >= 0.0)) {
            return Err(RewardError::InvalidParams("scale factors must be >= 0"));
        }
        if !(self.c_norm > 0.0) {
            return Err(RewardError::InvalidParams("c_norm must be > 0"));
        }
        if !(self.b_l > 0.0 && self.b_l < 1.0) {
            return Err(RewardError::InvalidParams("b_l must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Difference-reward scale for a run with at most `max_agents` agents.
    pub fn difference_scale(&self, max_agents: usize) -> f64 {
        self.c_d.unwrap_or(50.0 / max_agents.max(1) as f64)
    }
}

/// `f(i) = 1 - exp(-i / c_norm)`.
pub fn normalize_idleness(idleness: f64, c_norm: f64) -> Result<f64, RewardError> {
    if idleness < 0.0 || idleness.is_nan() {
        return Err(RewardError::NegativeIdleness(idleness));
    }
    Ok(-(-idleness / c_norm).exp_m1())
}

/// Global patrol score `(2 - mean - max) / 2` over normalized vertex idleness.
pub fn patrol_score(normalized: &[f64]) -> f64 {
    if normalized.is_empty() {
        return 1.0;
    }
    let mean = normalized.iter().sum::<f64>() / normalized.len() as f64;
    let max = normalized.iter().copied().fold(0.0, f64::max);
    (2.0 - mean - max) / 2.0
}

/// Patrol reward components for one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatrolReward {
    pub score: f64,
    pub difference: f64,
    pub total: f64,
}

/// `R_p = R'_p * c_rp + (R'_p - R'_{p,-k}) * c_d`, where `without_k` is the
/// normalized vertex idleness with agent k's visit this step undone.
pub fn patrol_reward(
    with_k: &[f64],
    without_k: &[f64],
    c_rp: f64,
    c_d: f64,
) -> Result<PatrolReward, RewardError> {
    if with_k.len() != without_k.len() {
        return Err(RewardError::ShapeMismatch(with_k.len(), without_k.len()));
    }
    let score = patrol_score(with_k);
    let difference = score - patrol_score(without_k);
    Ok(PatrolReward {
        score,
        difference,
        total: score * c_rp + difference * c_d,
    })
}

/// Battery penalty for a battery fraction `b` in `[0, 1]`.
pub fn battery_reward(b: f64, params: &RewardParams) -> Result<f64, RewardError> {
    if !(0.0..=1.0).contains(&b) {
        return Err(RewardError::OutOfRange(b));
    }
    Ok(if b == 0.0 {
        -params.c_pb
    } else if b <= params.b_l {
        -(params.c_pbm / params.b_l) * b + params.c_pbb
    } else {
        0.0
    })
}

pub fn collision_reward(involved: bool, params: &RewardParams) -> f64 {
    if involved {
        -params.c_pc
    } else {
        0.0
    }
}

/// Per-agent reward for one step, `total = patrol + battery + collision`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub patrol: f64,
    pub battery: f64,
    pub collision: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn new(patrol: f64, battery: f64, collision: f64) -> Self {
        Self {
            patrol,
            battery,
            collision,
            total: patrol + battery + collision,
        }
    }
}

/// Normalized idleness of every patrollable vertex, in vertex order.
pub fn normalized_vertex_idleness(world: &WorldState, c_norm: f64) -> Vec<f64> {
    let map = world.map();
    map.vertices()
        .iter()
        .map(|&v| normalize_idleness(world.idleness_at(v), c_norm).unwrap_or(0.0))
        .collect()
}

/// Rewards of every agent for the step that produced `outcome`, indexed by
/// agent id. Agents that acted get the full stack. Agents that sat the step
/// out while swapping get the shared patrol term only, since removing an
/// absent agent changes nothing. Failed agents get `None`.
pub fn step_rewards(
    world: &WorldState,
    outcome: &StepOutcome,
    params: &RewardParams,
    c_d: f64,
) -> Vec<Option<RewardBreakdown>> {
    let map = world.map();
    let with = normalized_vertex_idleness(world, params.c_norm);
    let score = patrol_score(&with);
    let vertex_slot: Vec<Option<usize>> = {
        let mut slots = vec![None; map.len()];
        for (k, &v) in map.vertices().iter().enumerate() {
            slots[map.index(v)] = Some(k);
        }
        slots
    };
    world
        .agents()
        .iter()
        .map(|agent| {
            let id = agent.id;
            if !outcome.acted[id] {
                return match agent.status {
                    AgentStatus::Failed => None,
                    _ => Some(RewardBreakdown::new(score * params.c_rp, 0.0, 0.0)),
                };
            }
            let mut without = with.clone();
            if let (Some(cell), Some(pre)) = (outcome.landed[id], outcome.pre_visit_idleness[id]) {
                let i = map.index(cell);
                if map.kind_at(i) == CellKind::Vertex {
                    if let Some(k) = vertex_slot[i] {
                        without[k] = normalize_idleness(pre, params.c_norm).unwrap_or(0.0);
                    }
                }
            }
            let patrol = patrol_reward(&with, &without, params.c_rp, c_d)
                .expect("same vertex count")
                .total;
            let b = if agent.status == AgentStatus::Failed {
                0.0
            } else {
                world.battery_fraction(id)
            };
            let battery = battery_reward(b, params).expect("fraction is clamped");
            let collision = collision_reward(outcome.involved[id], params);
            Some(RewardBreakdown::new(patrol, battery, collision))
        })
        .collect()
}

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{HarnessError, StrategyConfig, StrategyKind};
use crate::baselines::{baseline_controller, Controller};
use crate::derive_seed;
use crate::env::{EnvParams, EventKind, StepLog, WorldState};
use crate::map::GridMap;
use crate::mappo::RlController;
use crate::nn::PolicyModel;
use crate::observe::EncodingParams;
use crate::rewards::RewardParams;

/// Per-episode results. Idleness values are in minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub seed: u64,
    pub agents: usize,
    pub horizon: usize,
    /// Mean over measured steps of the mean vertex idleness.
    pub avg_idleness: f64,
    /// Mean over measured steps of the largest vertex idleness.
    pub max_bar_idleness: f64,
    pub collisions: usize,
    pub battery_failures: usize,
    /// Battery fraction of each agent when it started a swap.
    pub recharge_battery_samples: Vec<f64>,
    /// Active-agent count as `[step, count]` pairs, one per change.
    pub n_agents_effective: Vec<[u64; 2]>,
    pub mean_active_agents: f64,
}

/// What to keep besides the metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Recording {
    pub events: bool,
    pub trace: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub metrics: EpisodeMetrics,
    pub events: Vec<StepLog>,
    /// `(mean, max)` vertex idleness after every step.
    pub trace: Vec<(f64, f64)>,
}

/// Everything one episode depends on.
#[derive(Debug, Clone)]
pub struct EpisodeSpec<'a> {
    pub map: Arc<GridMap>,
    pub agents: usize,
    pub env: EnvParams,
    pub rewards: &'a RewardParams,
    pub encoding: EncodingParams,
    pub strategy: &'a StrategyConfig,
    /// Weights for the `rl` strategy.
    pub model: Option<&'a PolicyModel>,
    pub horizon: usize,
    pub burnin: usize,
    pub seed: u64,
    pub record: Recording,
}

pub fn build_controller(
    strategy: &StrategyConfig,
    world: &WorldState,
    rewards: &RewardParams,
    encoding: EncodingParams,
    model: Option<&PolicyModel>,
    seed: u64,
) -> Result<Box<dyn Controller>, HarnessError> {
    match strategy.kind.baseline() {
        Some(kind) => Ok(baseline_controller(kind, world, &strategy.baseline, rewards.b_l, rewards.c_norm, seed)?),
        None => {
            let model = model.ok_or_else(|| HarnessError::Config("strategy rl needs a checkpoint".into()))?;
            Ok(Box::new(RlController::new(model.clone(), world, encoding, seed, strategy.greedy)?))
        }
    }
}

/// Runs one lockstep episode. Idleness metrics cover steps
/// `burnin + 1 ..= horizon`; counts cover the whole episode.
pub fn run_episode(spec: &EpisodeSpec<'_>) -> Result<EpisodeResult, HarnessError> {
    if spec.horizon == 0 || spec.burnin >= spec.horizon {
        return Err(HarnessError::InvalidHorizon {
            horizon: spec.horizon,
            burnin: spec.burnin,
        });
    }
    if spec.strategy.kind == StrategyKind::Rl && spec.model.is_none() {
        return Err(HarnessError::Config("strategy rl needs a checkpoint".into()));
    }
    let mut world = WorldState::reset(spec.map.clone(), spec.agents, spec.env, derive_seed(spec.seed, 0))?;
    let mut controller = build_controller(spec.strategy, &world, spec.rewards, spec.encoding, spec.model, derive_seed(spec.seed, 1))?;

    let mut sum_mean = 0.0;
    let mut sum_max = 0.0;
    let mut measured = 0usize;
    let mut collisions = 0;
    let mut failures = 0;
    let mut samples = Vec::new();
    let mut active_trace = vec![[0, world.active_count() as u64]];
    let mut active_sum = 0usize;
    let mut events = Vec::new();
    let mut trace = Vec::new();
    for _ in 0..spec.horizon {
        let cmd = controller.decide(&world)?;
        let outcome = world.step(&cmd.messages, &cmd.actions)?;
        controller.observe(&world, &outcome);
        let (mean, max) = world.vertex_idleness_stats();
        let step = world.step_index();
        if step as usize > spec.burnin {
            sum_mean += mean;
            sum_max += max;
            measured += 1;
        }
        collisions += outcome.collisions;
        for e in &outcome.events {
            match e.kind {
                EventKind::BatteryFailed => failures += 1,
                EventKind::StartedSwap { battery_fraction } => samples.push(battery_fraction),
                _ => {}
            }
        }
        let active = world.active_count();
        active_sum += active;
        if active_trace.last().is_some_and(|l| l[1] != active as u64) {
            active_trace.push([step, active as u64]);
        }
        if spec.record.events {
            events.push(StepLog::record(&world, &outcome));
        }
        if spec.record.trace {
            trace.push((mean, max));
        }
    }
    let metrics = EpisodeMetrics {
        seed: spec.seed,
        agents: spec.agents,
        horizon: spec.horizon,
        avg_idleness: sum_mean / measured as f64,
        max_bar_idleness: sum_max / measured as f64,
        collisions,
        battery_failures: failures,
        recharge_battery_samples: samples,
        n_agents_effective: active_trace,
        mean_active_agents: active_sum as f64 / spec.horizon as f64,
    };
    Ok(EpisodeResult { metrics, events, trace })
}

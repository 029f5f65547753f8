//! Comparison strategies: Conscientious Reactive, Partitioning and
//! State-Exchange Bayesian, sharing one shortest-path charging policy.
//!
//! Every strategy is driven through [`Controller`], the same lockstep
//! interface the learned policy implements.

mod charging;
mod cr;
mod part;
mod partition;
pub mod path;
mod sebs;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{StepOutcome, WorldState};
use crate::map::{Action, Pos};

pub use charging::{ChargingParams, ChargingPlanner};
pub use cr::cr_next_action;
pub use part::{part_next_action, working_sets, PartController};
pub use partition::{check_partition, partition_map, PartitionAssignment, PartitionViolation};
pub use sebs::{sebs_next_action, sebs_posterior, SebsParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StrategyError {
    #[error("agent {agent} at {from} has no path to a charging station")]
    NoPathToStation { agent: usize, from: Pos },
    #[error("could not partition {vertices} vertices among {agents} agents after {attempts} attempts")]
    PartitionFailure {
        agents: usize,
        vertices: usize,
        attempts: usize,
    },
    #[error("policy error: {0}")]
    Policy(String),
}

impl StrategyError {
    pub fn kind(&self) -> &'static str {
        match self {
            StrategyError::NoPathToStation { .. } => "NoPathToStation",
            StrategyError::PartitionFailure { .. } => "PartitionFailure",
            StrategyError::Policy(_) => "PolicyError",
        }
    }
}

/// One step's messages and actions, indexed by agent id. Entries of inactive
/// agents are ignored by the environment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointCommand {
    pub messages: Vec<u8>,
    pub actions: Vec<Action>,
}

impl JointCommand {
    /// Everyone stays and sends message 1.
    pub fn idle(n_agents: usize) -> Self {
        Self {
            messages: vec![1; n_agents],
            actions: vec![Action::Stay; n_agents],
        }
    }
}

/// A team policy driven in lockstep with the environment.
pub trait Controller: Send {
    fn name(&self) -> &str;

    /// Joint command for the current state.
    fn decide(&mut self, world: &WorldState) -> Result<JointCommand, StrategyError>;

    /// Feedback after the world has stepped.
    fn observe(&mut self, _world: &WorldState, _outcome: &StepOutcome) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Cr,
    Part,
    Sebs,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Cr => "cr",
            BaselineKind::Part => "part",
            BaselineKind::Sebs => "sebs",
        }
    }
}

/// Tunables of the baseline strategies.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineParams {
    pub sebs: SebsParams,
    pub charging: ChargingParams,
}

/// Rounds of intention exchange per SEBS decision.
const SEBS_MAX_ROUNDS: usize = 8;

/// CR or SEBS with the charging override. PART lives in [`PartController`].
#[derive(Debug, Clone)]
pub struct GreedyController {
    kind: BaselineKind,
    sebs: SebsParams,
    c_norm: f64,
    charging: ChargingPlanner,
}

impl GreedyController {
    /// `kind` must be [`BaselineKind::Cr`] or [`BaselineKind::Sebs`].
    pub fn new(kind: BaselineKind, world: &WorldState, params: &BaselineParams, b_l: f64, c_norm: f64, seed: u64) -> Self {
        assert!(kind != BaselineKind::Part, "use PartController for partitioning");
        Self {
            kind,
            sebs: params.sebs,
            c_norm,
            charging: ChargingPlanner::new(world, params.charging, b_l, seed),
        }
    }
}

impl Controller for GreedyController {
    fn name(&self) -> &str {
        self.kind.name()
    }

    fn decide(&mut self, world: &WorldState) -> Result<JointCommand, StrategyError> {
        let n = world.agents().len();
        let mut cmd = JointCommand::idle(n);
        let mut free = vec![false; n];
        for id in 0..n {
            if !world.agents()[id].is_active() {
                continue;
            }
            match self.charging.charging_policy(world, id)? {
                Some(a) => cmd.actions[id] = a,
                None => free[id] = true,
            }
        }
        if self.kind == BaselineKind::Cr {
            for id in (0..n).filter(|&id| free[id]) {
                cmd.actions[id] = cr_next_action(world, id);
            }
            give_way(world, &mut cmd, &free);
            return Ok(cmd);
        }
        // Intentions start at the agents' current cells (or their charging
        // hop). Agents then re-declare in id order against everyone else's
        // latest declaration until a full round changes nothing.
        let target = |id: usize, a: Action| {
            let here = world.agents()[id].location;
            world.map().target(here, a).unwrap_or(here)
        };
        let mut intentions: Vec<Option<Pos>> = (0..n)
            .map(|id| world.agents()[id].is_active().then(|| target(id, cmd.actions[id])))
            .collect();
        for _ in 0..SEBS_MAX_ROUNDS {
            let mut changed = false;
            for id in (0..n).filter(|&id| free[id]) {
                let shared: Vec<Pos> = intentions
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != id)
                    .filter_map(|(_, p)| *p)
                    .collect();
                let (action, cell) = sebs_next_action(world, id, &shared, &self.sebs, self.c_norm);
                if intentions[id] != Some(cell) || cmd.actions[id] != action {
                    changed = true;
                }
                intentions[id] = Some(cell);
                cmd.actions[id] = action;
            }
            if !changed {
                break;
            }
        }
        give_way(world, &mut cmd, &free);
        Ok(cmd)
    }

    fn observe(&mut self, world: &WorldState, outcome: &StepOutcome) {
        self.charging.observe(world, outcome);
    }
}

/// Builds the controller of a baseline strategy for `world`.
pub fn baseline_controller(
    kind: BaselineKind,
    world: &WorldState,
    params: &BaselineParams,
    b_l: f64,
    c_norm: f64,
    seed: u64,
) -> Result<Box<dyn Controller>, StrategyError> {
    Ok(match kind {
        BaselineKind::Part => Box::new(PartController::new(world, params, b_l, seed)?),
        _ => Box::new(GreedyController::new(kind, world, params, b_l, c_norm, seed)),
    })
}

/// Keeps patrolling agents (`free`) out of the way of agents under the
/// charging override: they never step onto a returning agent's cell or next
/// hop, and one standing on such a hop moves aside, into a station if no
/// other cell is free. Without this a patroller caught between a returning
/// agent and a dead-end station blocks it until its battery runs out.
pub(crate) fn give_way(world: &WorldState, cmd: &mut JointCommand, free: &[bool]) {
    let map = world.map();
    let target = |here: Pos, a: Action| map.target(here, a).unwrap_or(here);
    let mut reserved = Vec::new();
    for a in world.active_agents().filter(|a| !free[a.id]) {
        reserved.push(a.location);
        reserved.push(target(a.location, cmd.actions[a.id]));
    }
    if reserved.is_empty() {
        return;
    }
    for a in world.active_agents().filter(|a| free[a.id]) {
        let (id, here) = (a.id, a.location);
        let in_the_way = reserved.contains(&here);
        if !in_the_way && !reserved.contains(&target(here, cmd.actions[id])) {
            continue;
        }
        let open = |p: Pos| !reserved.contains(&p) && world.occupant(p).is_none_or(|o| o == id);
        cmd.actions[id] = greedy_move(world, here, |p| open(p) && !map.is_station(p))
            .or_else(|| in_the_way.then(|| greedy_move(world, here, open)).flatten())
            .unwrap_or(Action::Stay);
    }
}

/// Highest-idleness move among mask-valid moves whose target passes
/// `allowed`, ties broken in action order. `None` when no move qualifies.
pub(crate) fn greedy_move(world: &WorldState, from: Pos, allowed: impl Fn(Pos) -> bool) -> Option<Action> {
    let map = world.map();
    let mut best: Option<(Action, f64)> = None;
    for action in Action::MOVES {
        let Some(target) = map.target(from, action) else {
            continue;
        };
        if !allowed(target) {
            continue;
        }
        let idle = world.idleness_at(target);
        if best.map_or(true, |(_, b)| idle > b) {
            best = Some((action, idle));
        }
    }
    best.map(|(a, _)| a)
}

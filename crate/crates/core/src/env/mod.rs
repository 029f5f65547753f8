//! Lockstep simulation of the patrolling world.
//!
//! One call to [`WorldState::step`] runs, in order: dynamics perturbation,
//! conflict resolution, duration sampling, idleness update, and battery /
//! hot-swap bookkeeping.

mod conflict;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use conflict::{resolve_conflicts, Resolution};

use crate::map::{Action, CellKind, GridMap, Pos};
use crate::observe::ActionMask;

/// Largest message value; messages are integers in `1..=MAX_MESSAGE`.
pub const MAX_MESSAGE: u8 = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("requested {requested} agents but the map has only {available} vertices")]
    TooManyAgents { requested: usize, available: usize },
    #[error("unknown or inactive agent {0}")]
    UnknownAgent(usize),
    #[error("agent {agent} submitted masked-out action {action:?}")]
    InvalidAction { agent: usize, action: Action },
    #[error("agent {agent} sent message {message}, expected 1..=16")]
    MessageOutOfRange { agent: usize, message: u8 },
    #[error("expected {expected} entries, got {got}")]
    WrongArity { expected: usize, got: usize },
    #[error("invalid environment parameters: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitIdleness {
    Zero,
    Saturated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvParams {
    /// Battery capacity in step units.
    pub b_max: f64,
    /// Hot-swap duration range in steps, inclusive.
    pub b_swap_range: [u32; 2],
    /// Initial battery range as a fraction of `b_max`.
    pub b_init_range: [f64; 2],
    pub p_dyn_max: f64,
    pub dt_minutes: f64,
    pub duration_multiplier_max: f64,
    /// Per-step battery drain multiplier range.
    pub drain_range: [f64; 2],
    pub init_idleness: InitIdleness,
    /// Initial vertex idleness in `saturated` mode, minutes.
    pub saturated_idleness_minutes: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            b_max: 550.0,
            b_swap_range: [80, 150],
            b_init_range: [0.90, 1.00],
            p_dyn_max: 0.05,
            dt_minutes: 0.1,
            duration_multiplier_max: 1.2,
            drain_range: [0.9, 1.1],
            init_idleness: InitIdleness::Zero,
            saturated_idleness_minutes: 2000.0,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        let ordered = |r: [f64; 2]| r[0] <= r[1] && r[0].is_finite() && r[1].is_finite();
        if !(self.b_max > 0.0) {
            return Err(EnvError::InvalidParams("b_max must be > 0"));
        }
        if self.b_swap_range[0] == 0 || self.b_swap_range[0] > self.b_swap_range[1] {
            return Err(EnvError::InvalidParams("b_swap_range must be ordered and >= 1"));
        }
        if !ordered(self.b_init_range) || self.b_init_range[0] <= 0.0 || self.b_init_range[1] > 1.0 {
            return Err(EnvError::InvalidParams("b_init_range must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.p_dyn_max) {
            return Err(EnvError::InvalidParams("p_dyn_max must lie in [0, 1]"));
        }
        if !(self.dt_minutes > 0.0) || !(self.duration_multiplier_max >= 1.0) {
            return Err(EnvError::InvalidParams("dt must be > 0 and multiplier >= 1"));
        }
        if !ordered(self.drain_range) || self.drain_range[0] < 0.0 {
            return Err(EnvError::InvalidParams("drain_range must be ordered and >= 0"));
        }
        if !(self.saturated_idleness_minutes >= 0.0) {
            return Err(EnvError::InvalidParams("saturated idleness must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum AgentStatus {
    Active,
    Swapping { remaining: u32, station: Pos },
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: usize,
    pub location: Pos,
    /// Remaining battery in step units.
    pub battery: f64,
    pub status: AgentStatus,
    /// Per-step probability that dynamics redirect this agent's move.
    pub p_dyn: f64,
    pub last_message: Option<u8>,
    pub intended_action: Option<Action>,
}

impl AgentState {
    pub fn is_active(&self) -> bool {
        self.status == AgentStatus::Active
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Moved,
    Stayed,
    Perturbed,
    Bounced,
    StartedSwap { battery_fraction: f64 },
    Redeployed,
    BatteryFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentEvent {
    pub agent: usize,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// What happened during one step. Per-agent vectors are indexed by agent id.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub duration: f64,
    pub events: Vec<AgentEvent>,
    pub collisions: usize,
    /// Agent was active when the step began and submitted an action.
    pub acted: Vec<bool>,
    pub perturbed: Vec<bool>,
    pub bounced: Vec<bool>,
    pub involved: Vec<bool>,
    /// Idleness of the agent's landing cell after the advance and before it
    /// was zeroed; `None` for agents that did not act.
    pub pre_visit_idleness: Vec<Option<f64>>,
    /// Landing cell of each acting agent.
    pub landed: Vec<Option<Pos>>,
}

impl StepOutcome {
    pub fn has_event(&self, agent: usize, pred: impl Fn(&EventKind) -> bool) -> bool {
        self.events.iter().any(|e| e.agent == agent && pred(&e.kind))
    }
}

/// Dynamic episode state.
#[derive(Debug, Clone)]
pub struct WorldState {
    map: Arc<GridMap>,
    params: EnvParams,
    /// Per-cell idleness in minutes; obstacles -1, stations 0.
    idleness: Vec<f64>,
    clock: f64,
    step_index: u64,
    agents: Vec<AgentState>,
    rng: ChaCha8Rng,
}

impl WorldState {
    /// Places `n_agents` on distinct random vertices with random batteries.
    pub fn reset(map: Arc<GridMap>, n_agents: usize, params: EnvParams, seed: u64) -> Result<Self, EnvError> {
        params.validate()?;
        let available = map.vertices().len();
        if n_agents > available {
            return Err(EnvError::TooManyAgents {
                requested: n_agents,
                available,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut free: Vec<Pos> = map.vertices().to_vec();
        let mut agents = Vec::with_capacity(n_agents);
        for id in 0..n_agents {
            let pick = rng.gen_range(0..free.len());
            let location = free.swap_remove(pick);
            let [lo, hi] = params.b_init_range;
            let battery = rng.gen_range(lo..=hi) * params.b_max;
            let p_dyn = rng.gen_range(0.0..=params.p_dyn_max);
            agents.push(AgentState {
                id,
                location,
                battery,
                status: AgentStatus::Active,
                p_dyn,
                last_message: None,
                intended_action: None,
            });
        }
        let start = match params.init_idleness {
            InitIdleness::Zero => 0.0,
            InitIdleness::Saturated => params.saturated_idleness_minutes,
        };
        let mut idleness: Vec<f64> = (0..map.len())
            .map(|i| match map.kind_at(i) {
                CellKind::Vertex => start,
                CellKind::Obstacle => -1.0,
                CellKind::Station => 0.0,
            })
            .collect();
        for a in &agents {
            idleness[map.index(a.location)] = 0.0;
        }
        Ok(Self {
            map,
            params,
            idleness,
            clock: 0.0,
            step_index: 0,
            agents,
            rng,
        })
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn map_arc(&self) -> &Arc<GridMap> {
        &self.map
    }

    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    pub fn idleness(&self) -> &[f64] {
        &self.idleness
    }

    pub fn idleness_at(&self, pos: Pos) -> f64 {
        self.idleness[self.map.index(pos)]
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn agent(&self, id: usize) -> Option<&AgentState> {
        self.agents.get(id)
    }

    pub fn active_agents(&self) -> impl Iterator<Item = &AgentState> {
        self.agents.iter().filter(|a| a.is_active())
    }

    pub fn active_count(&self) -> usize {
        self.active_agents().count()
    }

    pub fn battery_fraction(&self, id: usize) -> f64 {
        (self.agents[id].battery / self.params.b_max).clamp(0.0, 1.0)
    }

    /// Active agent occupying `pos`, if any.
    pub fn occupant(&self, pos: Pos) -> Option<usize> {
        self.active_agents().find(|a| a.location == pos).map(|a| a.id)
    }

    /// Mean and max idleness over patrollable vertices.
    pub fn vertex_idleness_stats(&self) -> (f64, f64) {
        let vertices = self.map.vertices();
        let mut sum = 0.0;
        let mut max = 0.0f64;
        for &v in vertices {
            let i = self.idleness[self.map.index(v)];
            sum += i;
            max = max.max(i);
        }
        (sum / vertices.len() as f64, max)
    }

    /// Overrides the p_dyn of every agent; used by tests and scripted runs.
    pub fn set_dynamics_probability(&mut self, p: f64) {
        for a in &mut self.agents {
            a.p_dyn = p;
        }
    }

    /// Directly sets an agent's battery; used by tests and scripted runs.
    pub fn set_battery(&mut self, id: usize, battery: f64) {
        self.agents[id].battery = battery;
    }

    /// Moves an active agent onto a free passable cell; used by tests and
    /// scripted runs. The idleness of the destination is not touched.
    pub fn place_agent(&mut self, id: usize, pos: Pos) -> Result<(), EnvError> {
        if !self.agents.get(id).is_some_and(|a| a.is_active()) {
            return Err(EnvError::UnknownAgent(id));
        }
        let in_bounds = pos.row < self.map.height() && pos.col < self.map.width();
        if !in_bounds || !self.map.is_passable(pos) {
            return Err(EnvError::InvalidParams("placement cell must be passable"));
        }
        if self.occupant(pos).is_some_and(|other| other != id) {
            return Err(EnvError::InvalidParams("placement cell is occupied"));
        }
        self.agents[id].location = pos;
        Ok(())
    }

    /// Advances the world by one step. `messages` and `actions` are indexed
    /// by agent id; entries of inactive agents are ignored.
    pub fn step(&mut self, messages: &[u8], actions: &[Action]) -> Result<StepOutcome, EnvError> {
        let n = self.agents.len();
        if messages.len() != n || actions.len() != n {
            return Err(EnvError::WrongArity {
                expected: n,
                got: messages.len().min(actions.len()),
            });
        }
        let acting: Vec<usize> = self.active_agents().map(|a| a.id).collect();
        let mut masks = vec![ActionMask::NONE; n];
        for &id in &acting {
            if !(1..=MAX_MESSAGE).contains(&messages[id]) {
                return Err(EnvError::MessageOutOfRange {
                    agent: id,
                    message: messages[id],
                });
            }
            masks[id] = ActionMask::for_position(&self.map, self.agents[id].location);
            if !masks[id].allows(actions[id]) {
                return Err(EnvError::InvalidAction {
                    agent: id,
                    action: actions[id],
                });
            }
        }

        let mut events = Vec::new();
        let mut perturbed = vec![false; n];
        let mut executed = actions.to_vec();

        // (1) dynamics
        for &id in &acting {
            let agent = &mut self.agents[id];
            agent.last_message = Some(messages[id]);
            agent.intended_action = Some(actions[id]);
            if self.rng.gen::<f64>() < agent.p_dyn {
                let valid: Vec<Action> = masks[id].valid_actions().collect();
                executed[id] = valid[self.rng.gen_range(0..valid.len())];
                perturbed[id] = true;
                events.push(AgentEvent {
                    agent: id,
                    kind: EventKind::Perturbed,
                });
            }
        }

        // (2) conflicts
        let origins: Vec<Pos> = acting.iter().map(|&id| self.agents[id].location).collect();
        let targets: Vec<Pos> = acting
            .iter()
            .map(|&id| {
                self.map
                    .target(self.agents[id].location, executed[id])
                    .expect("mask-valid action has a target")
            })
            .collect();
        let resolution = resolve_conflicts(&origins, &targets, &mut self.rng);
        let mut bounced = vec![false; n];
        let mut involved = vec![false; n];
        let mut landed = vec![None; n];
        for (k, &id) in acting.iter().enumerate() {
            bounced[id] = resolution.bounced[k];
            involved[id] = resolution.involved[k];
            let dest = resolution.final_positions[k];
            landed[id] = Some(dest);
            let kind = if resolution.bounced[k] {
                EventKind::Bounced
            } else if dest == origins[k] {
                EventKind::Stayed
            } else {
                EventKind::Moved
            };
            events.push(AgentEvent { agent: id, kind });
            self.agents[id].location = dest;
        }
        let collisions = resolution.collisions();

        // (3) duration
        let duration = if perturbed.iter().any(|&p| p) {
            self.params.dt_minutes * self.rng.gen_range(1.0..=self.params.duration_multiplier_max)
        } else {
            self.params.dt_minutes
        };
        self.clock += duration;
        self.step_index += 1;

        // (4) idleness
        for &v in self.map.vertices() {
            let i = self.map.index(v);
            self.idleness[i] += duration * (1.0 + self.map.priority_at(i) as f64);
        }
        let mut pre_visit_idleness = vec![None; n];
        for &id in &acting {
            let i = self.map.index(self.agents[id].location);
            pre_visit_idleness[id] = Some(self.idleness[i]);
            if self.map.kind_at(i) == CellKind::Vertex {
                self.idleness[i] = 0.0;
            }
        }

        // (5) battery, swaps, failures
        let swapping_before: Vec<usize> = self
            .agents
            .iter()
            .filter(|a| matches!(a.status, AgentStatus::Swapping { .. }))
            .map(|a| a.id)
            .collect();
        for &id in &acting {
            let [lo, hi] = self.params.drain_range;
            let drain = self.rng.gen_range(lo..=hi);
            let agent = &mut self.agents[id];
            agent.battery = (agent.battery - drain).max(0.0);
            let intended = self.map.target(origins_of(&origins, &acting, id), actions[id]);
            let on_purpose = !perturbed[id]
                && !bounced[id]
                && intended == Some(agent.location)
                && self.map.is_station(agent.location);
            if on_purpose {
                let [lo, hi] = self.params.b_swap_range;
                let remaining = self.rng.gen_range(lo..=hi);
                let battery_fraction = (agent.battery / self.params.b_max).clamp(0.0, 1.0);
                agent.status = AgentStatus::Swapping {
                    remaining,
                    station: agent.location,
                };
                events.push(AgentEvent {
                    agent: id,
                    kind: EventKind::StartedSwap { battery_fraction },
                });
            } else if agent.battery <= 0.0 {
                agent.battery = 0.0;
                agent.status = AgentStatus::Failed;
                events.push(AgentEvent {
                    agent: id,
                    kind: EventKind::BatteryFailed,
                });
            }
        }
        for id in swapping_before {
            let AgentStatus::Swapping { remaining, station } = self.agents[id].status else {
                continue;
            };
            let remaining = remaining.saturating_sub(1);
            if remaining == 0 && self.occupant(station).is_none() {
                let agent = &mut self.agents[id];
                agent.status = AgentStatus::Active;
                agent.location = station;
                agent.battery = self.params.b_max;
                agent.last_message = None;
                agent.intended_action = None;
                events.push(AgentEvent {
                    agent: id,
                    kind: EventKind::Redeployed,
                });
            } else {
                self.agents[id].status = AgentStatus::Swapping { remaining, station };
            }
        }

        let mut acted = vec![false; n];
        for &id in &acting {
            acted[id] = true;
        }
        Ok(StepOutcome {
            duration,
            events,
            collisions,
            acted,
            perturbed,
            bounced,
            involved,
            pre_visit_idleness,
            landed,
        })
    }
}

fn origins_of(origins: &[Pos], acting: &[usize], id: usize) -> Pos {
    let k = acting.iter().position(|&a| a == id).expect("acting agent");
    origins[k]
}

/// One JSON-lines record of the per-step event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub clock: f64,
    pub events: Vec<AgentEvent>,
    pub collisions: usize,
    pub idleness_mean: f64,
    pub idleness_max: f64,
}

impl StepLog {
    pub fn record(world: &WorldState, outcome: &StepOutcome) -> Self {
        let (idleness_mean, idleness_max) = world.vertex_idleness_stats();
        Self {
            step: world.step_index(),
            clock: world.clock(),
            events: outcome.events.clone(),
            collisions: outcome.collisions,
            idleness_mean,
            idleness_max,
        }
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{AgentStatus, StepOutcome, WorldState};
use crate::map::{Action, Pos};

use super::path::{distance_field, next_hop};
use super::StrategyError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChargingParams {
    /// Per-step drain assumed when sizing the return margin. `None` uses the
    /// environment's worst-case drain.
    pub drain_per_step: Option<f64>,
    /// Consecutive blocked steps before re-planning around occupied cells.
    pub blocked_replan_after: u32,
}

impl Default for ChargingParams {
    fn default() -> Self {
        Self {
            drain_per_step: None,
            blocked_replan_after: 2,
        }
    }
}

/// Shortest-path return-to-station override shared by the baselines.
///
/// An agent starts returning once its battery fraction drops to
/// `b_l + steps_to_station * drain / b_max` and keeps returning until it
/// starts a swap. Hops follow a BFS field towards the nearest station; after
/// `blocked_replan_after` consecutive bounces the path is re-planned with
/// occupied cells treated as obstacles, and if that leaves no path the
/// agent makes a random yielding move.
#[derive(Debug, Clone)]
pub struct ChargingPlanner {
    params: ChargingParams,
    b_l: f64,
    drain: f64,
    b_max: f64,
    station_field: Vec<Option<usize>>,
    returning: Vec<bool>,
    blocked: Vec<u32>,
    rng: ChaCha8Rng,
}

impl ChargingPlanner {
    pub fn new(world: &WorldState, params: ChargingParams, b_l: f64, seed: u64) -> Self {
        let map = world.map();
        let env = world.params();
        let n = world.agents().len();
        Self {
            params,
            b_l,
            drain: params.drain_per_step.unwrap_or(env.drain_range[1]),
            b_max: env.b_max,
            station_field: distance_field(map, map.stations(), |_| false),
            returning: vec![false; n],
            blocked: vec![0; n],
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x6368_6172_6765),
        }
    }

    /// Steps from `pos` to the nearest station ignoring other agents.
    pub fn steps_to_station(&self, world: &WorldState, pos: Pos) -> Option<usize> {
        self.station_field[world.map().index(pos)]
    }

    /// Battery fraction at or below which `agent` heads for a station.
    pub fn threshold(&self, steps: usize) -> f64 {
        self.b_l + steps as f64 * self.drain / self.b_max
    }

    pub fn is_returning(&self, agent: usize) -> bool {
        self.returning.get(agent).copied().unwrap_or(false)
    }

    /// Override action for `agent`, or `None` to let the strategy decide.
    pub fn charging_policy(&mut self, world: &WorldState, agent: usize) -> Result<Option<Action>, StrategyError> {
        let Some(me) = world.agent(agent).filter(|a| a.is_active()) else {
            return Ok(None);
        };
        let map = world.map();
        let from = me.location;
        let steps = self
            .steps_to_station(world, from)
            .ok_or(StrategyError::NoPathToStation { agent, from })?;
        if !self.returning[agent] && world.battery_fraction(agent) <= self.threshold(steps) {
            self.returning[agent] = true;
            self.blocked[agent] = 0;
        }
        if !self.returning[agent] {
            return Ok(None);
        }
        if steps == 0 {
            return Ok(Some(Action::Stay));
        }
        if self.blocked[agent] < self.params.blocked_replan_after {
            return Ok(next_hop(map, &self.station_field, from));
        }
        let occupied = |p: Pos| world.occupant(p).is_some_and(|o| o != agent);
        let detour = distance_field(map, map.stations(), |p| occupied(p) && !map.is_station(p));
        if let Some(hop) = next_hop(map, &detour, from) {
            let target = map.target(from, hop).expect("hop stays on the map");
            if !occupied(target) {
                return Ok(Some(hop));
            }
        }
        let free: Vec<Action> = Action::MOVES
            .into_iter()
            .filter(|&a| map.target(from, a).is_some_and(|p| !occupied(p) && !map.is_station(p)))
            .collect();
        Ok(Some(if free.is_empty() {
            Action::Stay
        } else {
            free[self.rng.gen_range(0..free.len())]
        }))
    }

    /// Tracks bounces and clears the returning flag once a swap begins.
    pub fn observe(&mut self, world: &WorldState, outcome: &StepOutcome) {
        for a in world.agents() {
            let id = a.id;
            if a.status != AgentStatus::Active {
                self.returning[id] = false;
                self.blocked[id] = 0;
            } else if self.returning[id] && outcome.acted[id] {
                if outcome.bounced[id] {
                    self.blocked[id] += 1;
                } else {
                    self.blocked[id] = 0;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvParams;
    use crate::map::parse_map;
    use std::sync::Arc;

    fn planner_world(text: &str, n: usize) -> (WorldState, ChargingPlanner) {
        let map = Arc::new(parse_map(text).unwrap());
        let mut w = WorldState::reset(map, n, EnvParams::default(), 5).unwrap();
        w.set_dynamics_probability(0.0);
        let p = ChargingPlanner::new(&w, ChargingParams::default(), 0.135, 1);
        (w, p)
    }

    #[test]
    fn threshold_semantics() {
        let (mut w, mut p) = planner_world("C....", 1);
        w.place_agent(0, Pos::new(0, 3)).unwrap();
        let t = p.threshold(3);
        w.set_battery(0, (t + 1e-6) * 550.0);
        assert_eq!(p.charging_policy(&w, 0).unwrap(), None);
        w.set_battery(0, t * 550.0);
        assert_eq!(p.charging_policy(&w, 0).unwrap(), Some(Action::Left));
        // sticky once triggered
        w.set_battery(0, 550.0);
        assert_eq!(p.charging_policy(&w, 0).unwrap(), Some(Action::Left));
    }
}

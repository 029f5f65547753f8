use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{AgentStatus, StepOutcome, WorldState};
use crate::map::{Action, Pos};

use super::charging::ChargingPlanner;
use super::partition::{partition_map, PartitionAssignment};
use super::path::{distance_field, next_hop};
use super::{give_way, greedy_move, BaselineParams, Controller, JointCommand, StrategyError};

/// Cells each active agent is currently responsible for, as a per-cell
/// membership mask indexed by agent id (empty for inactive agents).
///
/// An inactive agent's home region is handed to the active agent whose
/// home region shares the longest boundary with it, ties to the lower id;
/// if no active region touches it, to the active agent closest to it.
pub fn working_sets(world: &WorldState, assignment: &PartitionAssignment) -> Vec<Vec<bool>> {
    let map = world.map();
    let n = assignment.n_agents().min(world.agents().len());
    let active: Vec<usize> = (0..n).filter(|&i| world.agents()[i].is_active()).collect();
    let mut sets = vec![Vec::new(); world.agents().len()];
    for &i in &active {
        let mut mask = vec![false; map.len()];
        for &p in &assignment.home_partition[i] {
            mask[map.index(p)] = true;
        }
        sets[i] = mask;
    }
    if active.is_empty() {
        return sets;
    }
    for j in (0..n).filter(|j| !active.contains(j)) {
        let home = &assignment.home_partition[j];
        let boundary = |i: usize| -> usize {
            home.iter()
                .map(|&p| {
                    Action::MOVES
                        .iter()
                        .filter_map(|&a| map.target(p, a))
                        .filter(|&q| assignment.owner(map, q) == Some(i))
                        .count()
                })
                .sum()
        };
        let scored: Vec<(usize, usize)> = active.iter().map(|&i| (i, boundary(i))).collect();
        let longest = scored.iter().map(|&(_, b)| b).max().unwrap_or(0);
        let heir = if longest > 0 {
            scored.iter().find(|&&(_, b)| b == longest).map(|&(i, _)| i)
        } else {
            let field = distance_field(map, home, |p| map.is_station(p));
            active
                .iter()
                .copied()
                .min_by_key(|&i| (field[map.index(world.agents()[i].location)].unwrap_or(usize::MAX), i))
        };
        let heir = heir.expect("at least one active agent");
        for &p in home {
            sets[heir][map.index(p)] = true;
        }
    }
    sets
}

/// Partitioning strategy for one agent given its working set: inside the set
/// it patrols like CR restricted to the set's cells, outside it follows a
/// shortest path back (avoiding charging stations).
pub fn part_next_action(world: &WorldState, agent: usize, working_set: &[bool]) -> Action {
    part_move(world, agent, working_set, |_| false).unwrap_or(Action::Stay)
}

/// [`part_next_action`] with `blocked` cells treated as obstacles; `None`
/// when nothing is left to move to.
fn part_move(world: &WorldState, agent: usize, working_set: &[bool], blocked: impl Fn(Pos) -> bool) -> Option<Action> {
    let me = world.agent(agent).filter(|a| a.is_active())?;
    let map = world.map();
    let here = me.location;
    let inside = |p: Pos| working_set.get(map.index(p)).copied().unwrap_or(false);
    let roam = |p: Pos| !map.is_station(p) && !blocked(p);
    if inside(here) {
        return greedy_move(world, here, |p| inside(p) && !blocked(p));
    }
    let targets: Vec<Pos> = (0..map.len()).filter(|&i| working_set.get(i) == Some(&true)).map(|i| map.pos(i)).collect();
    if targets.is_empty() {
        return greedy_move(world, here, roam);
    }
    let field = distance_field(map, &targets, |p| map.is_station(p) || blocked(p));
    next_hop(map, &field, here)
        .filter(|&a| map.target(here, a).is_some_and(|p| !blocked(p)))
        .or_else(|| greedy_move(world, here, roam))
}

/// PART with the charging override. An agent that bounced
/// `blocked_replan_after` times in a row routes around occupied cells (or
/// makes a random free move if that leaves nothing) until it is back inside
/// its working set, so two agents cannot push against each other forever.
#[derive(Debug, Clone)]
pub struct PartController {
    assignment: PartitionAssignment,
    charging: ChargingPlanner,
    replan_after: u32,
    blocked: Vec<u32>,
    detour: Vec<bool>,
    rng: ChaCha8Rng,
}

impl PartController {
    pub fn new(world: &WorldState, params: &BaselineParams, b_l: f64, seed: u64) -> Result<Self, StrategyError> {
        let assignment = partition_map(world.map(), world.agents().len(), seed)?;
        Ok(Self::with_assignment(world, assignment, params, b_l, seed))
    }

    pub fn with_assignment(world: &WorldState, assignment: PartitionAssignment, params: &BaselineParams, b_l: f64, seed: u64) -> Self {
        Self {
            assignment,
            charging: ChargingPlanner::new(world, params.charging, b_l, seed),
            replan_after: params.charging.blocked_replan_after,
            blocked: vec![0; world.agents().len()],
            detour: vec![false; world.agents().len()],
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x7061_7274),
        }
    }

    pub fn assignment(&self) -> &PartitionAssignment {
        &self.assignment
    }
}

impl Controller for PartController {
    fn name(&self) -> &str {
        "part"
    }

    fn decide(&mut self, world: &WorldState) -> Result<JointCommand, StrategyError> {
        let n = world.agents().len();
        let mut cmd = JointCommand::idle(n);
        let sets = working_sets(world, &self.assignment);
        let mut free = vec![false; n];
        for id in 0..n {
            if !world.agents()[id].is_active() {
                continue;
            }
            let here = world.agents()[id].location;
            if self.blocked[id] >= self.replan_after {
                self.detour[id] = true;
            } else if sets[id].get(world.map().index(here)) == Some(&true) {
                self.detour[id] = false;
            }
            let charging = self.charging.charging_policy(world, id)?;
            free[id] = charging.is_none();
            cmd.actions[id] = match charging {
                Some(a) => a,
                None if !self.detour[id] => part_next_action(world, id, &sets[id]),
                None => {
                    let map = world.map();
                    let occupied = |p: Pos| world.occupant(p).is_some_and(|o| o != id);
                    part_move(world, id, &sets[id], occupied).unwrap_or_else(|| {
                        let free: Vec<Action> = Action::MOVES
                            .into_iter()
                            .filter(|&a| map.target(here, a).is_some_and(|p| !occupied(p) && !map.is_station(p)))
                            .collect();
                        if free.is_empty() {
                            Action::Stay
                        } else {
                            free[self.rng.gen_range(0..free.len())]
                        }
                    })
                }
            };
        }
        give_way(world, &mut cmd, &free);
        Ok(cmd)
    }

    fn observe(&mut self, world: &WorldState, outcome: &StepOutcome) {
        self.charging.observe(world, outcome);
        for a in world.agents() {
            let id = a.id;
            if a.status != AgentStatus::Active || self.charging.is_returning(id) {
                self.blocked[id] = 0;
                self.detour[id] = false;
            } else if outcome.acted[id] {
                self.blocked[id] = if outcome.bounced[id] { self.blocked[id] + 1 } else { 0 };
            }
        }
    }
}

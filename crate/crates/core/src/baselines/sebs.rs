use serde::{Deserialize, Serialize};

use crate::env::WorldState;
use crate::map::{Action, Pos};
use crate::rewards::normalize_idleness;

/// State-exchange Bayesian scoring. `theta` is the gain temperature of the
/// likelihood, `kappa` the discount on cells a teammate has declared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SebsParams {
    pub theta: f64,
    pub kappa: f64,
}

impl Default for SebsParams {
    fn default() -> Self {
        Self { theta: 0.5, kappa: 0.2 }
    }
}

/// Unnormalized posterior of moving to `target`:
/// `(1 - exp(-g/theta)) * prior * kappa^[declared]` with
/// `g = f(idleness) * (1 + priority)`.
pub fn sebs_posterior(world: &WorldState, target: Pos, prior: f64, declared: bool, params: &SebsParams, c_norm: f64) -> f64 {
    let idle = world.idleness_at(target).max(0.0);
    let gain = normalize_idleness(idle, c_norm).unwrap_or(0.0) * (1.0 + world.map().priority(target) as f64);
    let likelihood = -(-gain / params.theta).exp_m1();
    let discount = if declared { params.kappa } else { 1.0 };
    likelihood * prior * discount
}

/// Picks the neighbouring vertex with the highest posterior and returns the
/// move together with the declared target cell. Candidates are mask-valid
/// moves off charging stations, with a uniform move prior; ties go to the
/// earlier action. When every posterior is zero the first undeclared
/// candidate is taken, else the agent stays.
pub fn sebs_next_action(
    world: &WorldState,
    agent: usize,
    shared_intentions: &[Pos],
    params: &SebsParams,
    c_norm: f64,
) -> (Action, Pos) {
    let Some(me) = world.agent(agent).filter(|a| a.is_active()) else {
        let here = world.agent(agent).map_or(Pos::new(0, 0), |a| a.location);
        return (Action::Stay, here);
    };
    let map = world.map();
    let here = me.location;
    let candidates: Vec<(Action, Pos)> = Action::MOVES
        .into_iter()
        .filter_map(|a| map.target(here, a).map(|p| (a, p)))
        .filter(|&(_, p)| !map.is_station(p))
        .collect();
    if candidates.is_empty() {
        return (Action::Stay, here);
    }
    let prior = 1.0 / candidates.len() as f64;
    let mut best: Option<(Action, Pos, f64)> = None;
    for &(action, target) in &candidates {
        let declared = shared_intentions.contains(&target);
        let score = sebs_posterior(world, target, prior, declared, params, c_norm);
        if best.map_or(true, |(_, _, b)| score > b) {
            best = Some((action, target, score));
        }
    }
    match best {
        Some((action, target, score)) if score > 0.0 => (action, target),
        _ => candidates
            .iter()
            .find(|(_, p)| !shared_intentions.contains(p))
            .copied()
            .unwrap_or((Action::Stay, here)),
    }
}

use crate::env::WorldState;
use crate::map::Action;

use super::greedy_move;

/// Conscientious Reactive: move to the neighbouring vertex with the highest
/// idleness, ties in `<Up, Down, Left, Right>` order, Stay only when no move
/// is available. Charging stations are not patrol targets and are skipped;
/// an inactive agent stays.
pub fn cr_next_action(world: &WorldState, agent: usize) -> Action {
    let Some(a) = world.agent(agent).filter(|a| a.is_active()) else {
        return Action::Stay;
    };
    let map = world.map();
    greedy_move(world, a.location, |p| !map.is_station(p)).unwrap_or(Action::Stay)
}

//! Breadth-first distance fields on the 4-connected grid.

use std::collections::VecDeque;

use crate::map::{Action, GridMap, Pos};

/// Unit-cost distance from every cell to the nearest of `sources`, moving
/// through passable cells not rejected by `blocked`. Sources are always
/// included, even when blocked.
pub fn distance_field(map: &GridMap, sources: &[Pos], blocked: impl Fn(Pos) -> bool) -> Vec<Option<usize>> {
    let mut dist = vec![None; map.len()];
    let mut queue = VecDeque::new();
    for &s in sources {
        let i = map.index(s);
        if dist[i].is_none() {
            dist[i] = Some(0);
            queue.push_back(s);
        }
    }
    while let Some(p) = queue.pop_front() {
        let d = dist[map.index(p)].expect("queued cells have a distance");
        for action in Action::MOVES {
            if let Some(q) = map.target(p, action) {
                let j = map.index(q);
                if dist[j].is_none() && !blocked(q) {
                    dist[j] = Some(d + 1);
                    queue.push_back(q);
                }
            }
        }
    }
    dist
}

/// First move down `field` from `from`: the neighbour with the smallest
/// distance, ties in action order, provided it improves on `from`'s own
/// distance (or `from` lies outside the field).
pub fn next_hop(map: &GridMap, field: &[Option<usize>], from: Pos) -> Option<Action> {
    let here = field[map.index(from)];
    let mut best: Option<(Action, usize)> = None;
    for action in Action::MOVES {
        if let Some(q) = map.target(from, action) {
            if let Some(d) = field[map.index(q)] {
                if best.map_or(true, |(_, b)| d < b) {
                    best = Some((action, d));
                }
            }
        }
    }
    match (best, here) {
        (Some((a, d)), Some(h)) if d < h => Some(a),
        (Some((a, _)), None) => Some(a),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::parse_map;

    #[test]
    fn field_and_hop() {
        let map = parse_map("C..\n##.\n...").unwrap();
        let field = distance_field(&map, &[Pos::new(0, 0)], |_| false);
        assert_eq!(field[map.index(Pos::new(2, 0))], Some(6));
        assert_eq!(field[map.index(Pos::new(1, 0))], None);
        assert_eq!(next_hop(&map, &field, Pos::new(2, 2)), Some(Action::Up));
        assert_eq!(next_hop(&map, &field, Pos::new(0, 0)), None);
    }

    #[test]
    fn blocked_cells_are_routed_around() {
        let map = parse_map("C...\n....").unwrap();
        let blocked = Pos::new(0, 1);
        let field = distance_field(&map, &[Pos::new(0, 0)], |p| p == blocked);
        assert_eq!(field[map.index(Pos::new(0, 2))], Some(4));
        assert_eq!(next_hop(&map, &field, Pos::new(0, 2)), Some(Action::Down));
    }
}

use std::collections::BTreeMap;

use rand::Rng;

use crate::map::Pos;

/// Result of resolving one step's movement intents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution {
    pub final_positions: Vec<Pos>,
    pub bounced: Vec<bool>,
    /// Agents whose intent contested a cell, winners included.
    pub involved: Vec<bool>,
}

impl Resolution {
    pub fn collisions(&self) -> usize {
        self.bounced.iter().filter(|&&b| b).count()
    }
}

/// Resolves simultaneous moves from distinct `origins` towards `targets`.
///
/// Agents exchanging cells both bounce. Among several agents entering the
/// same cell one uniformly random contender wins, except that an agent
/// holding its own cell (staying, or bounced back) always keeps it. Bounced
/// agents reclaim their origin, which may in turn bounce agents that were
/// heading there; this repeats until no cell is claimed twice.
pub fn resolve_conflicts<R: Rng + ?Sized>(origins: &[Pos], targets: &[Pos], rng: &mut R) -> Resolution {
    assert_eq!(origins.len(), targets.len(), "one target per agent");
    let n = origins.len();
    let mut bounced = vec![false; n];
    let mut involved = vec![false; n];

    for i in 0..n {
        for j in (i + 1)..n {
            let moving = targets[i] != origins[i] && targets[j] != origins[j];
            if moving && targets[i] == origins[j] && targets[j] == origins[i] {
                bounced[i] = true;
                bounced[j] = true;
                involved[i] = true;
                involved[j] = true;
            }
        }
    }

    loop {
        let claim = |i: usize, bounced: &[bool]| if bounced[i] { origins[i] } else { targets[i] };
        let mut claims: BTreeMap<Pos, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            claims.entry(claim(i, &bounced)).or_default().push(i);
        }
        let mut changed = false;
        for (cell, group) in claims {
            if group.len() < 2 {
                continue;
            }
            for &i in &group {
                involved[i] = true;
            }
            let keeper = match group.iter().copied().find(|&i| origins[i] == cell) {
                Some(holder) => holder,
                None => group[rng.gen_range(0..group.len())],
            };
            for &i in &group {
                if i != keeper && !bounced[i] {
                    bounced[i] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let final_positions = (0..n)
        .map(|i| if bounced[i] { origins[i] } else { targets[i] })
        .collect();
    Resolution {
        final_positions,
        bounced,
        involved,
    }
}

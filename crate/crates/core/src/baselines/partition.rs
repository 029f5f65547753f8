use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map::{Action, CellKind, GridMap, Pos};

use super::StrategyError;

const ATTEMPTS: usize = 48;

/// Split of the patrollable vertices into one home region per agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionAssignment {
    /// Owning agent of each cell, row-major; `None` off the vertex set.
    pub partition_of: Vec<Option<usize>>,
    /// Cells of each agent's region in row-major order.
    pub home_partition: Vec<Vec<Pos>>,
}

impl PartitionAssignment {
    pub fn owner(&self, map: &GridMap, pos: Pos) -> Option<usize> {
        self.partition_of[map.index(pos)]
    }

    pub fn n_agents(&self) -> usize {
        self.home_partition.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PartitionViolation {
    #[error("cell {0} is not a vertex but is assigned")]
    NonVertexAssigned(Pos),
    #[error("vertex {0} is not covered")]
    Uncovered(Pos),
    #[error("vertex {0} is listed in more than one region")]
    Overlap(Pos),
    #[error("region lists and owner map disagree at {0}")]
    Inconsistent(Pos),
    #[error("region {0} is empty")]
    Empty(usize),
    #[error("region {0} is not connected")]
    Disconnected(usize),
    #[error("region sizes range from {min} to {max}")]
    Unbalanced { min: usize, max: usize },
}

/// Exhaustive check of the partition invariants: disjoint, covering the
/// vertex set, each region connected, sizes as even as possible.
pub fn check_partition(map: &GridMap, assignment: &PartitionAssignment) -> Result<(), PartitionViolation> {
    let n = assignment.home_partition.len();
    let mut seen = vec![None; map.len()];
    for (agent, cells) in assignment.home_partition.iter().enumerate() {
        if cells.is_empty() {
            return Err(PartitionViolation::Empty(agent));
        }
        for &p in cells {
            if map.kind(p) != CellKind::Vertex {
                return Err(PartitionViolation::NonVertexAssigned(p));
            }
            let i = map.index(p);
            if seen[i].is_some() {
                return Err(PartitionViolation::Overlap(p));
            }
            seen[i] = Some(agent);
        }
    }
    for i in 0..map.len() {
        let p = map.pos(i);
        if map.kind_at(i) == CellKind::Vertex && seen[i].is_none() {
            return Err(PartitionViolation::Uncovered(p));
        }
        if assignment.partition_of.get(i).copied().flatten() != seen[i] {
            return Err(PartitionViolation::Inconsistent(p));
        }
    }
    for (agent, cells) in assignment.home_partition.iter().enumerate() {
        let mut reached = vec![false; map.len()];
        let mut queue = VecDeque::from([cells[0]]);
        reached[map.index(cells[0])] = true;
        let mut count = 1;
        while let Some(p) = queue.pop_front() {
            for a in Action::MOVES {
                if let Some(q) = map.target(p, a) {
                    let j = map.index(q);
                    if !reached[j] && seen[j] == Some(agent) {
                        reached[j] = true;
                        count += 1;
                        queue.push_back(q);
                    }
                }
            }
        }
        if count != cells.len() {
            return Err(PartitionViolation::Disconnected(agent));
        }
    }
    let sizes: Vec<usize> = assignment.home_partition.iter().map(Vec::len).collect();
    let (min, max) = (*sizes.iter().min().unwrap_or(&0), *sizes.iter().max().unwrap_or(&0));
    let v = map.vertices().len();
    let allowed = v.div_ceil(n.max(1)) - v / n.max(1);
    if max - min > allowed {
        return Err(PartitionViolation::Unbalanced { min, max });
    }
    Ok(())
}

/// Vertex-only adjacency: slot `k` is `map.vertices()[k]`.
struct VertexGraph {
    adj: Vec<Vec<usize>>,
}

impl VertexGraph {
    fn new(map: &GridMap) -> Self {
        let mut slot = vec![usize::MAX; map.len()];
        for (k, &v) in map.vertices().iter().enumerate() {
            slot[map.index(v)] = k;
        }
        let adj = map
            .vertices()
            .iter()
            .map(|&v| {
                Action::MOVES
                    .iter()
                    .filter_map(|&a| map.target(v, a))
                    .map(|q| slot[map.index(q)])
                    .filter(|&k| k != usize::MAX)
                    .collect()
            })
            .collect();
        Self { adj }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    fn bfs(&self, start: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.len()];
        dist[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &w in &self.adj[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Whether region `r` stays connected (and non-empty) without `cut`.
    fn connected_without(&self, owner: &[usize], r: usize, cut: usize) -> bool {
        let members: Vec<usize> = (0..self.len()).filter(|&k| owner[k] == r && k != cut).collect();
        let Some(&start) = members.first() else {
            return false;
        };
        let mut seen = vec![false; self.len()];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &w in &self.adj[u] {
                if !seen[w] && w != cut && owner[w] == r {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == members.len()
    }
}

/// Balanced connected partition of the vertex set for `n_agents` agents.
///
/// Seeds are spread out by farthest-point sampling, regions grow breadth
/// first up to the balanced capacity, stragglers join an adjacent region,
/// and the sizes are then evened out by moving boundary cells along chains
/// of neighbouring regions, never moving a cell whose removal would split
/// its region. Seeded retries bound the search; exhausting them is reported
/// as [`StrategyError::PartitionFailure`].
pub fn partition_map(map: &GridMap, n_agents: usize, seed: u64) -> Result<PartitionAssignment, StrategyError> {
    let graph = VertexGraph::new(map);
    let v = graph.len();
    let failure = StrategyError::PartitionFailure {
        agents: n_agents,
        vertices: v,
        attempts: ATTEMPTS,
    };
    if n_agents == 0 || n_agents > v {
        return Err(failure);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..ATTEMPTS {
        let seeds = spread_seeds(&graph, n_agents, &mut rng);
        let Some(mut owner) = grow(&graph, &seeds, &mut rng) else {
            continue;
        };
        if repair(&graph, &mut owner, n_agents, &mut rng) {
            let assignment = build(map, &owner, n_agents);
            if check_partition(map, &assignment).is_ok() {
                return Ok(assignment);
            }
        }
    }
    Err(failure)
}

fn spread_seeds(graph: &VertexGraph, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let v = graph.len();
    let mut seeds = vec![rng.gen_range(0..v)];
    let mut nearest = graph.bfs(seeds[0]);
    while seeds.len() < n {
        let far = (0..v)
            .filter(|k| !seeds.contains(k))
            .map(|k| nearest[k])
            .max()
            .expect("n <= |V| leaves a candidate");
        let ties: Vec<usize> = (0..v).filter(|&k| nearest[k] == far && !seeds.contains(&k)).collect();
        let pick = *ties.choose(rng).expect("non-empty ties");
        seeds.push(pick);
        for (k, d) in graph.bfs(pick).into_iter().enumerate() {
            nearest[k] = nearest[k].min(d);
        }
    }
    seeds
}

fn grow(graph: &VertexGraph, seeds: &[usize], rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    let v = graph.len();
    let n = seeds.len();
    let cap = v.div_ceil(n);
    let mut owner = vec![usize::MAX; v];
    let mut sizes = vec![1; n];
    let mut frontier: Vec<VecDeque<usize>> = vec![VecDeque::new(); n];
    for (r, &s) in seeds.iter().enumerate() {
        owner[s] = r;
    }
    for (r, &s) in seeds.iter().enumerate() {
        frontier[r].extend(graph.adj[s].iter().copied());
    }
    let mut order: Vec<usize> = (0..n).collect();
    loop {
        let mut progress = false;
        order.shuffle(rng);
        for &r in &order {
            if sizes[r] >= cap {
                continue;
            }
            while let Some(c) = frontier[r].pop_front() {
                if owner[c] == usize::MAX {
                    owner[c] = r;
                    sizes[r] += 1;
                    frontier[r].extend(graph.adj[c].iter().copied().filter(|&w| owner[w] == usize::MAX));
                    progress = true;
                    break;
                }
            }
        }
        if !progress {
            break;
        }
    }
    loop {
        let mut changed = false;
        for c in 0..v {
            if owner[c] != usize::MAX {
                continue;
            }
            let best = graph.adj[c]
                .iter()
                .map(|&w| owner[w])
                .filter(|&r| r != usize::MAX)
                .min_by_key(|&r| (sizes[r], r));
            if let Some(r) = best {
                owner[c] = r;
                sizes[r] += 1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    owner.iter().all(|&r| r != usize::MAX).then_some(owner)
}

/// Cells of `from` that border `to` and can leave `from` without splitting it.
fn movable(graph: &VertexGraph, owner: &[usize], sizes: &[usize], from: usize, to: usize) -> Vec<usize> {
    if sizes[from] <= 1 {
        return Vec::new();
    }
    (0..graph.len())
        .filter(|&c| owner[c] == from && graph.adj[c].iter().any(|&w| owner[w] == to))
        .filter(|&c| graph.connected_without(owner, from, c))
        .collect()
}

fn repair(graph: &VertexGraph, owner: &mut [usize], n: usize, rng: &mut ChaCha8Rng) -> bool {
    let v = graph.len();
    let (lo, hi) = (v / n, v.div_ceil(n));
    for _ in 0..(4 * v + 64) {
        let mut sizes = vec![0; n];
        for &r in owner.iter() {
            sizes[r] += 1;
        }
        let (min, max) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
        if max - min <= hi - lo {
            return true;
        }
        let (donor, receiver): (Vec<bool>, Vec<bool>) = if max > hi {
            (sizes.iter().map(|&s| s > hi).collect(), sizes.iter().map(|&s| s < hi).collect())
        } else {
            (sizes.iter().map(|&s| s > lo).collect(), sizes.iter().map(|&s| s < lo).collect())
        };

        // Region adjacency usable for a transfer, searched breadth first
        // from every donor at once.
        let mut parent = vec![usize::MAX; n];
        let mut visited = donor.clone();
        let mut queue: VecDeque<usize> = (0..n).filter(|&r| donor[r]).collect();
        let mut reached = None;
        'search: while let Some(r) = queue.pop_front() {
            for s in 0..n {
                if visited[s] || movable(graph, owner, &sizes, r, s).is_empty() {
                    continue;
                }
                visited[s] = true;
                parent[s] = r;
                if receiver[s] {
                    reached = Some(s);
                    break 'search;
                }
                queue.push_back(s);
            }
        }
        let Some(end) = reached else {
            if !chunk_transfer(graph, owner, &sizes, rng) {
                return false;
            }
            continue;
        };
        let mut chain = vec![end];
        while parent[*chain.last().unwrap()] != usize::MAX {
            chain.push(parent[*chain.last().unwrap()]);
        }
        chain.reverse();
        for pair in chain.windows(2) {
            let (from, to) = (pair[0], pair[1]);
            let candidates = movable(graph, owner, &sizes, from, to);
            let Some(best) = candidates.iter().map(|&c| graph.adj[c].iter().filter(|&&w| owner[w] == to).count()).max() else {
                break;
            };
            let tight: Vec<usize> = candidates
                .into_iter()
                .filter(|&c| graph.adj[c].iter().filter(|&&w| owner[w] == to).count() == best)
                .collect();
            let c = *tight.choose(rng).expect("non-empty");
            owner[c] = to;
            sizes[from] -= 1;
            sizes[to] += 1;
        }
    }
    false
}

/// Components of region `r` once `cut` is removed, largest first.
fn split_components(graph: &VertexGraph, owner: &[usize], r: usize, cut: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; graph.len()];
    let mut parts = Vec::new();
    for start in 0..graph.len() {
        if owner[start] != r || start == cut || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut part = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &w in &graph.adj[u] {
                if !seen[w] && w != cut && owner[w] == r {
                    seen[w] = true;
                    part.push(w);
                    queue.push_back(w);
                }
            }
        }
        parts.push(part);
    }
    parts.sort_by_key(|p| std::cmp::Reverse(p.len()));
    parts
}

/// Fallback when no chain of single-cell moves exists: hand a boundary cell
/// to a neighbouring region together with whatever pieces of its old region
/// it was holding on, keeping the largest piece behind. Among moves that do
/// not increase the squared imbalance, a best one is applied at random.
fn chunk_transfer(graph: &VertexGraph, owner: &mut [usize], sizes: &[usize], rng: &mut ChaCha8Rng) -> bool {
    let n = sizes.len() as i64;
    let v = graph.len() as i64;
    let cost = |sizes: &[i64]| sizes.iter().map(|&s| (s * n - v).pow(2)).sum::<i64>();
    let base: Vec<i64> = sizes.iter().map(|&s| s as i64).collect();
    let current = cost(&base);
    let mut best: Vec<(usize, usize, Vec<usize>)> = Vec::new();
    let mut best_cost = current;
    for c in 0..graph.len() {
        let r = owner[c];
        let mut targets: Vec<usize> = graph.adj[c].iter().map(|&w| owner[w]).filter(|&s| s != r).collect();
        targets.sort_unstable();
        targets.dedup();
        if targets.is_empty() || sizes[r] <= 1 {
            continue;
        }
        let parts = split_components(graph, owner, r, c);
        let mut chunk = vec![c];
        for p in &parts[1..] {
            chunk.extend(p);
        }
        for s in targets {
            let mut next = base.clone();
            next[r] -= chunk.len() as i64;
            next[s] += chunk.len() as i64;
            let k = cost(&next);
            if k < best_cost {
                best_cost = k;
                best.clear();
            }
            if k == best_cost {
                best.push((r, s, chunk.clone()));
            }
        }
    }
    let Some((_, s, chunk)) = best.choose(rng) else {
        return false;
    };
    for &c in chunk {
        owner[c] = *s;
    }
    true
}

fn build(map: &GridMap, owner: &[usize], n: usize) -> PartitionAssignment {
    let mut partition_of = vec![None; map.len()];
    let mut home_partition = vec![Vec::new(); n];
    for (k, &v) in map.vertices().iter().enumerate() {
        partition_of[map.index(v)] = Some(owner[k]);
        home_partition[owner[k]].push(v);
    }
    PartitionAssignment {
        partition_of,
        home_partition,
    }
}

//! Patrolling maps: parsing, validation, rendering and random generation.
//!
//! Map text format, one row per line:
//!
//! ```text
//! ; comment lines start with ';'
//! C..#
//! .2.#
//! ....
//! ```
//!
//! `.` is a priority-0 vertex, `1`..`9` a vertex with that priority, `#` an
//! obstacle and `C` a charging station. All rows must have the same width.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Grid coordinate, `(row, col)` with the origin at the top-left cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Movement action. The discriminant order is the action-vector order used
/// by masks and policy heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Stay = 4,
}

impl Action {
    pub const ALL: [Action; 5] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Stay,
    ];
    pub const MOVES: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    /// Row/column offset of the move.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Stay => (0, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    Vertex,
    Obstacle,
    Station,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MapError {
    #[error("unknown glyph {glyph:?} at row {row}, column {col}")]
    UnknownGlyph { row: usize, col: usize, glyph: char },
    #[error("row {row} has width {got}, expected {expected}")]
    NonRectangular {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("map contains no rows")]
    Empty,
    #[error("map has no charging station")]
    NoStation,
    #[error("map has no patrollable vertex")]
    NoVertex,
    #[error("cell at row {row}, column {col} is unreachable from the rest of the map")]
    DisconnectedGraph { row: usize, col: usize },
    #[error("invalid map dimensions {height}x{width}")]
    BadDimensions { height: usize, width: usize },
}

impl MapError {
    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            MapError::UnknownGlyph { .. } => "UnknownGlyph",
            MapError::NonRectangular { .. } => "NonRectangular",
            MapError::Empty => "Empty",
            MapError::NoStation => "NoStation",
            MapError::NoVertex => "NoVertex",
            MapError::DisconnectedGraph { .. } => "DisconnectedGraph",
            MapError::BadDimensions { .. } => "BadDimensions",
        }
    }
}

/// Immutable patrolling map. Cells are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    height: usize,
    width: usize,
    cells: Vec<CellKind>,
    priority: Vec<i32>,
    cell_edge_meters: f64,
    vertices: Vec<Pos>,
    stations: Vec<Pos>,
}

impl GridMap {
    pub const DEFAULT_CELL_EDGE_METERS: f64 = 50.0;

    /// Builds and validates a map from raw cells and vertex priorities.
    /// Priorities of obstacles and stations are overwritten with -1 and 0.
    pub fn from_cells(
        height: usize,
        width: usize,
        cells: Vec<CellKind>,
        mut priority: Vec<i32>,
    ) -> Result<Self, MapError> {
        if height == 0 || width == 0 || cells.len() != height * width || priority.len() != cells.len()
        {
            return Err(MapError::BadDimensions { height, width });
        }
        let mut vertices = Vec::new();
        let mut stations = Vec::new();
        for (i, kind) in cells.iter().enumerate() {
            let pos = Pos::new(i / width, i % width);
            match kind {
                CellKind::Vertex => {
                    priority[i] = priority[i].max(0);
                    vertices.push(pos);
                }
                CellKind::Station => {
                    priority[i] = 0;
                    stations.push(pos);
                }
                CellKind::Obstacle => priority[i] = -1,
            }
        }
        if stations.is_empty() {
            return Err(MapError::NoStation);
        }
        if vertices.is_empty() {
            return Err(MapError::NoVertex);
        }
        let map = Self {
            height,
            width,
            cells,
            priority,
            cell_edge_meters: Self::DEFAULT_CELL_EDGE_METERS,
            vertices,
            stations,
        };
        map.check_connected()?;
        Ok(map)
    }

    fn check_connected(&self) -> Result<(), MapError> {
        let start = self.stations[0];
        let dist = self.bfs_distances(start, |_| false);
        for i in 0..self.cells.len() {
            if self.cells[i] != CellKind::Obstacle && dist[i].is_none() {
                return Err(MapError::DisconnectedGraph {
                    row: i / self.width,
                    col: i % self.width,
                });
            }
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell_edge_meters(&self) -> f64 {
        self.cell_edge_meters
    }

    pub fn index(&self, pos: Pos) -> usize {
        pos.row * self.width + pos.col
    }

    pub fn pos(&self, index: usize) -> Pos {
        Pos::new(index / self.width, index % self.width)
    }

    pub fn kind(&self, pos: Pos) -> CellKind {
        self.cells[self.index(pos)]
    }

    pub fn kind_at(&self, index: usize) -> CellKind {
        self.cells[index]
    }

    pub fn priority(&self, pos: Pos) -> i32 {
        self.priority[self.index(pos)]
    }

    pub fn priority_at(&self, index: usize) -> i32 {
        self.priority[index]
    }

    /// Patrollable vertices in row-major order (stations excluded).
    pub fn vertices(&self) -> &[Pos] {
        &self.vertices
    }

    pub fn stations(&self) -> &[Pos] {
        &self.stations
    }

    pub fn is_station(&self, pos: Pos) -> bool {
        self.kind(pos) == CellKind::Station
    }

    pub fn is_passable(&self, pos: Pos) -> bool {
        self.kind(pos) != CellKind::Obstacle
    }

    /// Cell reached by `action` from `pos`, if it is in bounds and not an obstacle.
    pub fn target(&self, pos: Pos, action: Action) -> Option<Pos> {
        let (dr, dc) = action.delta();
        let row = pos.row.checked_add_signed(dr)?;
        let col = pos.col.checked_add_signed(dc)?;
        if row >= self.height || col >= self.width {
            return None;
        }
        let next = Pos::new(row, col);
        self.is_passable(next).then_some(next)
    }

    /// Passable 4-neighbours of `pos`, in action order.
    pub fn neighbors(&self, pos: Pos) -> impl Iterator<Item = Pos> + '_ {
        Action::MOVES.into_iter().filter_map(move |a| self.target(pos, a))
    }

    /// Unit-cost BFS distances from `start` over passable cells, skipping
    /// cells for which `blocked` returns true (the start is never skipped).
    pub fn bfs_distances(&self, start: Pos, blocked: impl Fn(Pos) -> bool) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.cells.len()];
        let mut queue = VecDeque::new();
        dist[self.index(start)] = Some(0);
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let d = dist[self.index(p)].unwrap_or(0);
            for n in self.neighbors(p) {
                let ni = self.index(n);
                if dist[ni].is_none() && !blocked(n) {
                    dist[ni] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    /// Whether the patrollable vertices stay connected when stations are
    /// treated as impassable.
    pub fn vertex_graph_connected(&self) -> bool {
        let start = self.vertices[0];
        let dist = self.bfs_distances(start, |p| self.is_station(p));
        self.vertices.iter().all(|&v| dist[self.index(v)].is_some())
    }

    /// Text form accepted by [`parse_map`].
    pub fn render(&self) -> String {
        let mut out = String::with_capacity(self.height * (self.width + 1));
        for row in 0..self.height {
            for col in 0..self.width {
                let i = row * self.width + col;
                let glyph = match self.cells[i] {
                    CellKind::Obstacle => '#',
                    CellKind::Station => 'C',
                    CellKind::Vertex => match self.priority[i] {
                        0 => '.',
                        p => char::from_digit(p.clamp(1, 9) as u32, 10).unwrap_or('9'),
                    },
                };
                out.push(glyph);
            }
            out.push('\n');
        }
        out
    }
}

/// Parses and validates a map in the text format described in the module docs.
pub fn parse_map(text: &str) -> Result<GridMap, MapError> {
    let mut rows: Vec<&str> = Vec::new();
    for line in text.lines() {
        let line = line.trim_end_matches('\r');
        if line.starts_with(';') || line.trim().is_empty() {
            continue;
        }
        rows.push(line);
    }
    if rows.is_empty() {
        return Err(MapError::Empty);
    }
    let width = rows[0].chars().count();
    let height = rows.len();
    let mut cells = Vec::with_capacity(width * height);
    let mut priority = Vec::with_capacity(width * height);
    for (row, line) in rows.iter().enumerate() {
        let got = line.chars().count();
        if got != width {
            return Err(MapError::NonRectangular {
                row,
                expected: width,
                got,
            });
        }
        for (col, glyph) in line.chars().enumerate() {
            let (kind, p) = match glyph {
                '.' => (CellKind::Vertex, 0),
                '1'..='9' => (CellKind::Vertex, glyph as i32 - '0' as i32),
                '#' => (CellKind::Obstacle, -1),
                'C' => (CellKind::Station, 0),
                _ => return Err(MapError::UnknownGlyph { row, col, glyph }),
            };
            cells.push(kind);
            priority.push(p);
        }
    }
    GridMap::from_cells(height, width, cells, priority)
}

/// Parameters for [`generate_map`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateParams {
    pub height: usize,
    pub width: usize,
    /// Probability that a non-station cell becomes an obstacle.
    pub obstacle_density: f64,
    /// Probability that a vertex gets a nonzero priority.
    pub priority_density: f64,
    pub max_priority: i32,
    pub stations: usize,
}

impl Default for GenerateParams {
    fn default() -> Self {
        Self {
            height: 8,
            width: 8,
            obstacle_density: 0.15,
            priority_density: 0.1,
            max_priority: 3,
            stations: 1,
        }
    }
}

/// Draws a random valid map. Obstacles that would disconnect the map, or
/// cut the vertices apart once stations are excluded, are dropped, so the
/// result always satisfies the [`GridMap`] invariants and
/// [`GridMap::vertex_graph_connected`].
pub fn generate_map<R: Rng + ?Sized>(params: &GenerateParams, rng: &mut R) -> Result<GridMap, MapError> {
    let (h, w) = (params.height, params.width);
    let n = h * w;
    let stations = params.stations.max(1);
    if n < 2 * stations + 1 || h == 0 || w == 0 {
        return Err(MapError::BadDimensions { height: h, width: w });
    }
    let mut cells = vec![CellKind::Vertex; n];
    let mut priority = vec![0; n];
    loop {
        cells.iter_mut().for_each(|c| *c = CellKind::Vertex);
        let mut placed = 0;
        while placed < stations {
            let i = rng.gen_range(0..n);
            if cells[i] == CellKind::Vertex {
                cells[i] = CellKind::Station;
                placed += 1;
            }
        }
        if open_cells_connected(h, w, &cells) && vertices_connected(h, w, &cells) {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    for &i in &order {
        if cells[i] != CellKind::Vertex || !rng.gen_bool(params.obstacle_density.clamp(0.0, 1.0)) {
            continue;
        }
        cells[i] = CellKind::Obstacle;
        let keep = cells.iter().filter(|&&k| k == CellKind::Vertex).count() >= 1
            && open_cells_connected(h, w, &cells)
            && vertices_connected(h, w, &cells);
        if !keep {
            cells[i] = CellKind::Vertex;
        }
    }
    for i in 0..n {
        if cells[i] == CellKind::Vertex
            && params.max_priority > 0
            && rng.gen_bool(params.priority_density.clamp(0.0, 1.0))
        {
            priority[i] = rng.gen_range(1..=params.max_priority.min(9));
        }
    }
    GridMap::from_cells(h, w, cells, priority)
}

fn open_cells_connected(h: usize, w: usize, cells: &[CellKind]) -> bool {
    connected_subset(h, w, cells, |k| k != CellKind::Obstacle)
}

fn vertices_connected(h: usize, w: usize, cells: &[CellKind]) -> bool {
    connected_subset(h, w, cells, |k| k == CellKind::Vertex)
}

fn connected_subset(h: usize, w: usize, cells: &[CellKind], member: impl Fn(CellKind) -> bool) -> bool {
    let Some(start) = cells.iter().position(|&k| member(k)) else {
        return false;
    };
    let mut seen = vec![false; cells.len()];
    let mut stack = vec![start];
    seen[start] = true;
    let mut count = 1;
    while let Some(i) = stack.pop() {
        let (r, c) = (i / w, i % w);
        let mut visit = |j: usize| {
            if !seen[j] && member(cells[j]) {
                seen[j] = true;
                count += 1;
                stack.push(j);
            }
        };
        if r > 0 {
            visit(i - w);
        }
        if r + 1 < h {
            visit(i + w);
        }
        if c > 0 {
            visit(i - 1);
        }
        if c + 1 < w {
            visit(i + 1);
        }
    }
    count == cells.iter().filter(|&&k| member(k)).count()
}

//! Warehouse grid maps: parsing, the movement graph, item placement, and the
//! grouping of caches, ports and agents.
//!
//! Movement rule: shelves can be entered only from aisle cells and left only
//! into aisle cells; shelf-to-shelf moves are forbidden. Cache and port cells
//! are traversable exactly like aisles. The resulting move relation is
//! symmetric, which keeps breadth-first distances exact in both directions.

use std::collections::VecDeque;
use std::fmt;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::rng::{stream_rng, Stream};
use crate::taskgen::Task;
use crate::{AgentId, ItemId};

/// A cell coordinate, `(row, col)`, row 0 at the top.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub const fn new(row: usize, col: usize) -> Self {
        Pos { row, col }
    }
}

impl fmt::Debug for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CellKind {
    Obstacle,
    Aisle,
    Shelf,
    Cache,
    Port,
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error("malformed map: {0}")]
    Malformed(String),
    #[error("{kind:?} cell at {pos} is unreachable from the aisle network")]
    UnreachableCell { kind: CellKind, pos: Pos },
    #[error("cache count {requested} is not reachable by removing whole columns ({detail})")]
    InvalidCacheCount { requested: usize, detail: String },
    #[error("{agents} agents cannot be split evenly across {ports} ports")]
    IndivisibleAgents { agents: usize, ports: usize },
    #[error("single-port grouping requires a map with exactly one port, found {0}")]
    SinglePortCount(usize),
}

/// How ports, caches and agents are grouped.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum GroupMode {
    /// One group owning the single port, all caches and all agents.
    SinglePort,
    /// One group per port; caches join their nearest port, agents split evenly.
    MultiPort,
}

impl std::str::FromStr for GroupMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(GroupMode::SinglePort),
            "multi" => Ok(GroupMode::MultiPort),
            other => Err(format!("unknown group mode `{other}` (expected single|multi)")),
        }
    }
}

impl fmt::Display for GroupMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupMode::SinglePort => write!(f, "single"),
            GroupMode::MultiPort => write!(f, "multi"),
        }
    }
}

/// One working group: an unloading port with its caches, agents and task queue.
#[derive(Clone, Debug)]
pub struct Group {
    pub id: usize,
    pub port: Pos,
    pub caches: Vec<Pos>,
    pub agents: Vec<AgentId>,
    pub queue: VecDeque<Task>,
}

/// Breadth-first distances from one target cell over the movement graph.
#[derive(Clone, Debug)]
pub struct DistField {
    cols: usize,
    dist: Vec<u32>,
}

impl DistField {
    pub const UNREACHABLE: u32 = u32::MAX;

    /// Distance in moves from `p` to the target; `UNREACHABLE` if no path.
    pub fn get(&self, p: Pos) -> u32 {
        self.dist[p.row * self.cols + p.col]
    }

    pub fn reachable(&self, p: Pos) -> bool {
        self.get(p) != Self::UNREACHABLE
    }
}

/// The warehouse map. Immutable once built; cheap to share across runs.
#[derive(Clone, Debug)]
pub struct GridMap {
    rows: usize,
    cols: usize,
    kinds: Vec<CellKind>,
    shelves: Vec<Pos>,
    caches: Vec<Pos>,
    ports: Vec<Pos>,
    /// Item stored by each shelf (parallel to `shelves`); empty until
    /// `assign_items` runs.
    item_of_shelf: Vec<ItemId>,
    /// Inverse mapping, item index -> index into `shelves`.
    shelf_idx_of_item: Vec<usize>,
    /// Dense cell index -> index into `shelves`, usize::MAX elsewhere.
    shelf_lookup: Vec<usize>,
}

impl GridMap {
    /// Parses the ASCII map format: `@` obstacle, `.` aisle, `S` shelf,
    /// `C` cache, `U` unloading port. Leading lines starting with `#` are
    /// ignored. All rows must have equal length, every shelf/cache/port must
    /// be reachable from the aisle network, and the map needs at least one
    /// shelf and one port.
    pub fn parse(text: &str) -> Result<Self, MapError> {
        let lines: Vec<&str> = text
            .lines()
            .map(|l| l.strip_suffix('\r').unwrap_or(l))
            .skip_while(|l| l.starts_with('#'))
            .filter(|l| !l.is_empty())
            .collect();
        if lines.is_empty() {
            return Err(MapError::Malformed("empty map".into()));
        }
        let rows = lines.len();
        let cols = lines[0].len();
        let mut kinds = Vec::with_capacity(rows * cols);
        let mut shelves = Vec::new();
        let mut caches = Vec::new();
        let mut ports = Vec::new();
        for (r, line) in lines.iter().enumerate() {
            if line.len() != cols {
                return Err(MapError::Malformed(format!(
                    "ragged row {r}: {} chars, expected {cols}",
                    line.len()
                )));
            }
            for (c, ch) in line.chars().enumerate() {
                let kind = match ch {
                    '@' => CellKind::Obstacle,
                    '.' => CellKind::Aisle,
                    'S' => CellKind::Shelf,
                    'C' => CellKind::Cache,
                    'U' => CellKind::Port,
                    other => {
                        return Err(MapError::Malformed(format!(
                            "unknown character `{other}` at row {r}, col {c}"
                        )))
                    }
                };
                match kind {
                    CellKind::Shelf => shelves.push(Pos::new(r, c)),
                    CellKind::Cache => caches.push(Pos::new(r, c)),
                    CellKind::Port => ports.push(Pos::new(r, c)),
                    _ => {}
                }
                kinds.push(kind);
            }
        }
        if ports.is_empty() {
            return Err(MapError::Malformed("map has no unloading port".into()));
        }
        if shelves.is_empty() {
            return Err(MapError::Malformed("map has no shelf".into()));
        }

        let mut shelf_lookup = vec![usize::MAX; rows * cols];
        for (i, &s) in shelves.iter().enumerate() {
            shelf_lookup[s.row * cols + s.col] = i;
        }

        let map = GridMap {
            rows,
            cols,
            kinds,
            shelves,
            caches,
            ports,
            item_of_shelf: Vec::new(),
            shelf_idx_of_item: Vec::new(),
            shelf_lookup,
        };
        map.check_reachability()?;
        Ok(map)
    }

    /// Every non-obstacle cell must be reachable from the aisle network under
    /// the movement rule; the relation is symmetric so one flood fill decides.
    fn check_reachability(&self) -> Result<(), MapError> {
        let seed = (0..self.kinds.len())
            .find(|&i| !matches!(self.kinds[i], CellKind::Obstacle | CellKind::Shelf))
            .ok_or_else(|| MapError::Malformed("map has no aisle-like cell".into()))?;
        let mut seen = vec![false; self.kinds.len()];
        let mut queue = VecDeque::new();
        seen[seed] = true;
        queue.push_back(self.pos_of(seed));
        while let Some(v) = queue.pop_front() {
            for u in self.neighbors(v) {
                let i = self.index(u);
                if !seen[i] {
                    seen[i] = true;
                    queue.push_back(u);
                }
            }
        }
        for i in 0..self.kinds.len() {
            if self.kinds[i] != CellKind::Obstacle && !seen[i] {
                return Err(MapError::UnreachableCell {
                    kind: self.kinds[i],
                    pos: self.pos_of(i),
                });
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shelves(&self) -> &[Pos] {
        &self.shelves
    }

    pub fn caches(&self) -> &[Pos] {
        &self.caches
    }

    pub fn ports(&self) -> &[Pos] {
        &self.ports
    }

    /// Number of distinct item kinds, one per shelf.
    pub fn item_count(&self) -> usize {
        self.shelves.len()
    }

    pub fn index(&self, p: Pos) -> usize {
        p.row * self.cols + p.col
    }

    fn pos_of(&self, index: usize) -> Pos {
        Pos::new(index / self.cols, index % self.cols)
    }

    pub fn kind_at(&self, p: Pos) -> CellKind {
        self.kinds[self.index(p)]
    }

    pub fn is_traversable(&self, p: Pos) -> bool {
        p.row < self.rows && p.col < self.cols && self.kind_at(p) != CellKind::Obstacle
    }

    /// Whether the single move `from -> to` (including waiting in place) is
    /// legal under the movement rule.
    pub fn move_legal(&self, from: Pos, to: Pos) -> bool {
        if !self.is_traversable(from) || !self.is_traversable(to) {
            return false;
        }
        if from == to {
            return true;
        }
        let dr = from.row.abs_diff(to.row);
        let dc = from.col.abs_diff(to.col);
        if dr + dc != 1 {
            return false;
        }
        match (self.kind_at(from), self.kind_at(to)) {
            (CellKind::Shelf, CellKind::Aisle) | (CellKind::Aisle, CellKind::Shelf) => true,
            (CellKind::Shelf, _) | (_, CellKind::Shelf) => false,
            _ => true,
        }
    }

    /// Successor cells of `v`: the wait move first, then the legal
    /// up/right/down/left moves in that fixed clockwise order.
    pub fn neighbors(&self, v: Pos) -> Vec<Pos> {
        debug_assert!(self.is_traversable(v));
        let mut out = Vec::with_capacity(5);
        out.push(v);
        let deltas = [(-1i64, 0i64), (0, 1), (1, 0), (0, -1)];
        for (dr, dc) in deltas {
            let r = v.row as i64 + dr;
            let c = v.col as i64 + dc;
            if r < 0 || c < 0 || r as usize >= self.rows || c as usize >= self.cols {
                continue;
            }
            let u = Pos::new(r as usize, c as usize);
            if self.move_legal(v, u) {
                out.push(u);
            }
        }
        out
    }

    /// Assigns a seeded uniform-random permutation of item kinds to shelves.
    /// Deterministic for a given seed.
    pub fn assign_items(&mut self, seed: u64) {
        let mut rng = stream_rng(seed, Stream::Placement, 0);
        let mut items: Vec<ItemId> = (0..self.shelves.len()).collect();
        items.shuffle(&mut rng);
        let mut inverse = vec![usize::MAX; items.len()];
        for (shelf_idx, &item) in items.iter().enumerate() {
            inverse[item] = shelf_idx;
        }
        self.item_of_shelf = items;
        self.shelf_idx_of_item = inverse;
    }

    pub fn items_assigned(&self) -> bool {
        !self.item_of_shelf.is_empty()
    }

    /// Item stored by the shelf at `p`, if `p` is a shelf and items are placed.
    pub fn item_at_shelf(&self, p: Pos) -> Option<ItemId> {
        let i = self.shelf_lookup[self.index(p)];
        if i == usize::MAX {
            return None;
        }
        self.item_of_shelf.get(i).copied()
    }

    /// Shelf position holding `item`. Panics if items are not assigned.
    pub fn shelf_of_item(&self, item: ItemId) -> Pos {
        self.shelves[self.shelf_idx_of_item[item]]
    }

    /// For each cache (in list order), the index of its nearest port by
    /// shortest-path distance, ties broken toward the lower port index.
    pub fn cache_owner_ports(&self) -> Vec<usize> {
        let fields: Vec<DistField> = self.ports.iter().map(|&p| self.shortest_dist(p)).collect();
        self.caches
            .iter()
            .map(|&c| {
                let mut best = 0;
                let mut best_d = fields[0].get(c);
                for (i, f) in fields.iter().enumerate().skip(1) {
                    let d = f.get(c);
                    if d < best_d {
                        best = i;
                        best_d = d;
                    }
                }
                best
            })
            .collect()
    }

    /// Keeps exactly `n` active caches by deleting whole cache columns from
    /// the right within each port's cache block; deleted caches become aisle.
    pub fn select_cache_subset(&self, n: usize) -> Result<GridMap, MapError> {
        let total = self.caches.len();
        if n > total {
            return Err(MapError::InvalidCacheCount {
                requested: n,
                detail: format!("map has only {total} caches"),
            });
        }
        let groups = self.ports.len();
        if n % groups != 0 {
            return Err(MapError::InvalidCacheCount {
                requested: n,
                detail: format!("not divisible across {groups} groups"),
            });
        }
        let per_group = n / groups;
        let owners = self.cache_owner_ports();

        let mut removed = vec![false; total];
        for g in 0..groups {
            let member_idx: Vec<usize> = (0..total).filter(|&i| owners[i] == g).collect();
            let mut remaining = member_idx.len();
            // Distinct columns of this block, rightmost first.
            let mut cols: Vec<usize> = member_idx.iter().map(|&i| self.caches[i].col).collect();
            cols.sort_unstable();
            cols.dedup();
            cols.reverse();
            for col in cols {
                if remaining == per_group {
                    break;
                }
                let in_col: Vec<usize> = member_idx
                    .iter()
                    .copied()
                    .filter(|&i| self.caches[i].col == col)
                    .collect();
                if remaining - in_col.len() < per_group {
                    break;
                }
                for i in in_col {
                    removed[i] = true;
                    remaining -= 1;
                }
            }
            if remaining != per_group {
                return Err(MapError::InvalidCacheCount {
                    requested: n,
                    detail: format!(
                        "group {g} holds {} caches; {per_group} per group is not a whole number of columns",
                        member_idx.len()
                    ),
                });
            }
        }

        let mut out = self.clone();
        for (i, &pos) in self.caches.iter().enumerate() {
            if removed[i] {
                out.kinds[self.index(pos)] = CellKind::Aisle;
            }
        }
        out.caches = self
            .caches
            .iter()
            .enumerate()
            .filter(|(i, _)| !removed[*i])
            .map(|(_, &p)| p)
            .collect();
        Ok(out)
    }

    /// Breadth-first distance field toward `target` over the movement graph.
    pub fn shortest_dist(&self, target: Pos) -> DistField {
        debug_assert!(self.is_traversable(target));
        let mut dist = vec![DistField::UNREACHABLE; self.rows * self.cols];
        let mut queue = VecDeque::new();
        dist[self.index(target)] = 0;
        queue.push_back(target);
        while let Some(v) = queue.pop_front() {
            let d = dist[self.index(v)];
            for u in self.neighbors(v) {
                let i = self.index(u);
                if dist[i] == DistField::UNREACHABLE {
                    dist[i] = d + 1;
                    queue.push_back(u);
                }
            }
        }
        DistField { cols: self.cols, dist }
    }
}

/// Partitions caches, ports and agents into working groups.
///
/// Single-port mode: one group owning everything. Multi-port mode: one group
/// per port; each cache joins its nearest port and agent `i` joins group
/// `i % ports`.
pub fn build_groups(
    map: &GridMap,
    mode: GroupMode,
    agent_count: usize,
) -> Result<Vec<Group>, MapError> {
    let ports = map.ports();
    match mode {
        GroupMode::SinglePort => {
            if ports.len() != 1 {
                return Err(MapError::SinglePortCount(ports.len()));
            }
            Ok(vec![Group {
                id: 0,
                port: ports[0],
                caches: map.caches().to_vec(),
                agents: (0..agent_count).collect(),
                queue: VecDeque::new(),
            }])
        }
        GroupMode::MultiPort => {
            if agent_count % ports.len() != 0 {
                return Err(MapError::IndivisibleAgents {
                    agents: agent_count,
                    ports: ports.len(),
                });
            }
            let owners = map.cache_owner_ports();
            let mut groups: Vec<Group> = ports
                .iter()
                .enumerate()
                .map(|(id, &port)| Group {
                    id,
                    port,
                    caches: Vec::new(),
                    agents: Vec::new(),
                    queue: VecDeque::new(),
                })
                .collect();
            for (i, &owner) in owners.iter().enumerate() {
                groups[owner].caches.push(map.caches()[i]);
            }
            for agent in 0..agent_count {
                groups[agent % ports.len()].agents.push(agent);
            }
            Ok(groups)
        }
    }
}

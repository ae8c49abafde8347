//! Per-group cache state: item slots, shared/exclusive locks, the set of
//! in-flight insertions, and the check / insert / release operations.
//!
//! Lock protocol: a read lock may be taken only while no write lock is held;
//! a write lock only while no lock of either kind is held. A granted write
//! lock makes the slot's current item unreadable, so an eviction is effective
//! from the moment the lock is granted and physical at release time. The
//! `incoming` set prevents two agents from concurrently inserting the same
//! item through different slots.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::gridmap::Pos;
use crate::{AgentId, ItemId, Timestep};

/// Cache replacement policy. `None` disables caching entirely (the baseline).
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Lru,
    Fifo,
    Random,
    None,
}

impl std::str::FromStr for Policy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lru" => Ok(Policy::Lru),
            "fifo" => Ok(Policy::Fifo),
            "random" => Ok(Policy::Random),
            "none" => Ok(Policy::None),
            other => Err(format!(
                "unknown policy `{other}` (expected lru|fifo|random|none)"
            )),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Lru => write!(f, "lru"),
            Policy::Fifo => write!(f, "fifo"),
            Policy::Random => write!(f, "random"),
            Policy::None => write!(f, "none"),
        }
    }
}

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("agent {agent} holds no lock at cache grid {at}")]
    LockNotHeld { agent: AgentId, at: Pos },
}

/// One cache cell: at most one stored item, any number of readers or one
/// writer.
#[derive(Clone, Debug)]
pub struct CacheGrid {
    pub position: Pos,
    pub item: Option<ItemId>,
    pub read_locks: BTreeSet<AgentId>,
    pub write_lock: Option<AgentId>,
    pub inserted_at: Timestep,
    pub last_used: Timestep,
}

impl CacheGrid {
    fn new(position: Pos) -> Self {
        CacheGrid {
            position,
            item: None,
            read_locks: BTreeSet::new(),
            write_lock: None,
            inserted_at: 0,
            last_used: 0,
        }
    }

    fn unlocked(&self) -> bool {
        self.read_locks.is_empty() && self.write_lock.is_none()
    }
}

/// Outcome of a cache lookup.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CheckResult {
    /// Item present and readable; the caller now holds a read lock there.
    Hit(Pos),
    Miss,
}

/// Outcome of an insertion request.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum InsertResult {
    /// A write lock was granted on this grid.
    Write(Pos),
    /// Nothing to do or nothing writable; carry the item straight to the port.
    DirectToPort,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum OpKind {
    Check,
    Insert,
    Release,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpKind::Check => write!(f, "check"),
            OpKind::Insert => write!(f, "insert"),
            OpKind::Release => write!(f, "release"),
        }
    }
}

/// One line of the optional operation log.
#[derive(Clone, Debug)]
pub struct OpRecord {
    pub at: Timestep,
    pub op: OpKind,
    pub agent: AgentId,
    pub item: ItemId,
    pub grid: Option<Pos>,
    pub outcome: &'static str,
}

impl fmt::Display for OpRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let grid = match self.grid {
            Some(p) => format!("{}:{}", p.row, p.col),
            None => "-".to_string(),
        };
        write!(
            f,
            "{},{},{},{},{},{}",
            self.at, self.op, self.agent, self.item, grid, self.outcome
        )
    }
}

/// All cache grids of one group plus the bookkeeping shared between them.
#[derive(Clone, Debug)]
pub struct CacheStore {
    grids: Vec<CacheGrid>,
    incoming: BTreeSet<ItemId>,
    policy: Policy,
    rng: Option<ChaCha8Rng>,
    hits: u64,
    misses: u64,
    op_log: Option<Vec<OpRecord>>,
}

impl CacheStore {
    /// `rng` feeds the RANDOM policy only and may be `None` otherwise.
    pub fn new(positions: &[Pos], policy: Policy, rng: Option<ChaCha8Rng>) -> Self {
        CacheStore {
            grids: positions.iter().map(|&p| CacheGrid::new(p)).collect(),
            incoming: BTreeSet::new(),
            policy,
            rng,
            hits: 0,
            misses: 0,
            op_log: None,
        }
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn grids(&self) -> &[CacheGrid] {
        &self.grids
    }

    pub fn incoming(&self) -> &BTreeSet<ItemId> {
        &self.incoming
    }

    pub fn enable_op_log(&mut self) {
        self.op_log = Some(Vec::new());
    }

    pub fn op_log(&self) -> Option<&[OpRecord]> {
        self.op_log.as_deref()
    }

    fn log(&mut self, at: Timestep, op: OpKind, agent: AgentId, item: ItemId, grid: Option<Pos>, outcome: &'static str) {
        if let Some(log) = self.op_log.as_mut() {
            log.push(OpRecord { at, op, agent, item, grid, outcome });
        }
    }

    /// Looks up `item` for a reader. On a hit the agent acquires a read lock
    /// and the grid's recency is refreshed; a miss changes nothing.
    pub fn check(&mut self, agent: AgentId, item: ItemId, now: Timestep) -> CheckResult {
        debug_assert_eq!(self.lock_counts(agent), (0, 0), "agent {agent} already holds a lock");
        if self.policy != Policy::None {
            for i in 0..self.grids.len() {
                if self.grids[i].item == Some(item) && self.grids[i].write_lock.is_none() {
                    self.grids[i].read_locks.insert(agent);
                    self.grids[i].last_used = now;
                    let pos = self.grids[i].position;
                    self.log(now, OpKind::Check, agent, item, Some(pos), "hit");
                    return CheckResult::Hit(pos);
                }
            }
        }
        self.log(now, OpKind::Check, agent, item, None, "miss");
        CheckResult::Miss
    }

    /// Requests a slot to insert `item` into. Duplicate items (stored or
    /// in-flight) and fully locked stores fall through to `DirectToPort`;
    /// otherwise the first free empty slot wins, then the eviction order
    /// picks among unlocked occupied slots.
    pub fn insert(&mut self, agent: AgentId, item: ItemId, now: Timestep) -> InsertResult {
        debug_assert_eq!(self.lock_counts(agent), (0, 0), "agent {agent} already holds a lock");
        if self.policy == Policy::None {
            self.log(now, OpKind::Insert, agent, item, None, "port");
            return InsertResult::DirectToPort;
        }
        if self.grids.iter().any(|g| g.item == Some(item)) || self.incoming.contains(&item) {
            self.log(now, OpKind::Insert, agent, item, None, "port");
            return InsertResult::DirectToPort;
        }
        if let Some(i) = self
            .grids
            .iter()
            .position(|g| g.item.is_none() && g.unlocked())
        {
            return self.grant_write(i, agent, item, now);
        }
        let occupied: Vec<usize> = (0..self.grids.len())
            .filter(|&i| self.grids[i].item.is_some())
            .collect();
        let order = order_indices(self.policy, &occupied, &self.grids, self.rng.as_mut());
        for i in order {
            if self.grids[i].unlocked() {
                return self.grant_write(i, agent, item, now);
            }
        }
        self.log(now, OpKind::Insert, agent, item, None, "port");
        InsertResult::DirectToPort
    }

    fn grant_write(&mut self, i: usize, agent: AgentId, item: ItemId, now: Timestep) -> InsertResult {
        self.grids[i].write_lock = Some(agent);
        self.incoming.insert(item);
        let pos = self.grids[i].position;
        self.log(now, OpKind::Insert, agent, item, Some(pos), "write");
        InsertResult::Write(pos)
    }

    /// Releases whatever lock `agent` holds on the grid at `at`. A writer
    /// commits `item` into the slot and refreshes both timestamps; a reader
    /// leaves the slot untouched.
    pub fn release_all_locks(
        &mut self,
        agent: AgentId,
        item: ItemId,
        at: Pos,
        now: Timestep,
    ) -> Result<(), CacheError> {
        let Some(i) = self.grids.iter().position(|g| g.position == at) else {
            return Err(CacheError::LockNotHeld { agent, at });
        };
        let grid = &mut self.grids[i];
        if grid.write_lock == Some(agent) {
            grid.write_lock = None;
            grid.item = Some(item);
            grid.inserted_at = now;
            grid.last_used = now;
            self.incoming.remove(&item);
            self.log(now, OpKind::Release, agent, item, Some(at), "commit");
            Ok(())
        } else if grid.read_locks.remove(&agent) {
            debug_assert_eq!(grid.item, Some(item), "reader's item changed under the lock");
            self.incoming.remove(&item);
            self.log(now, OpKind::Release, agent, item, Some(at), "read_done");
            Ok(())
        } else {
            Err(CacheError::LockNotHeld { agent, at })
        }
    }

    /// One per-task hit/miss count, recorded by the simulation at delivery.
    pub fn record_fulfillment(&mut self, hit: bool) {
        if hit {
            self.hits += 1;
        } else {
            self.misses += 1;
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    /// `(read locks, write locks)` held by `agent` across the store.
    pub fn lock_counts(&self, agent: AgentId) -> (usize, usize) {
        let reads = self.grids.iter().filter(|g| g.read_locks.contains(&agent)).count();
        let writes = self.grids.iter().filter(|g| g.write_lock == Some(agent)).count();
        (reads, writes)
    }

    pub fn grid_at(&self, pos: Pos) -> Option<&CacheGrid> {
        self.grids.iter().find(|g| g.position == pos)
    }

    pub fn stored_item_count(&self) -> usize {
        self.grids.iter().filter(|g| g.item.is_some()).count()
    }

    /// Structural invariants, asserted at task-assigner event boundaries in
    /// instrumented runs.
    pub fn verify_invariants(&self) -> Result<(), String> {
        let mut stored = BTreeSet::new();
        for g in &self.grids {
            if g.write_lock.is_some() && !g.read_locks.is_empty() {
                return Err(format!(
                    "grid {} holds a write lock and {} read locks",
                    g.position,
                    g.read_locks.len()
                ));
            }
            if g.item.is_none() && !g.read_locks.is_empty() {
                return Err(format!("empty grid {} has read locks", g.position));
            }
            if let Some(item) = g.item {
                if !stored.insert(item) {
                    return Err(format!("item {item} stored in two grids"));
                }
            }
        }
        if let Some(item) = self.incoming.iter().find(|i| stored.contains(i)) {
            return Err(format!("item {item} both stored and incoming"));
        }
        Ok(())
    }
}

/// Orders the given occupied grids by eviction preference: LRU by oldest
/// `last_used`, FIFO by oldest `inserted_at`, RANDOM by seeded shuffle. Ties
/// fall back to list position. Returns indices into `grids`.
pub fn evict_order(
    policy: Policy,
    grids: &[CacheGrid],
    rng: Option<&mut ChaCha8Rng>,
) -> Vec<usize> {
    debug_assert!(grids.iter().all(|g| g.item.is_some()));
    let all: Vec<usize> = (0..grids.len()).collect();
    order_indices(policy, &all, grids, rng)
}

fn order_indices(
    policy: Policy,
    candidates: &[usize],
    grids: &[CacheGrid],
    rng: Option<&mut ChaCha8Rng>,
) -> Vec<usize> {
    let mut order = candidates.to_vec();
    match policy {
        Policy::Lru => order.sort_by_key(|&i| (grids[i].last_used, i)),
        Policy::Fifo => order.sort_by_key(|&i| (grids[i].inserted_at, i)),
        Policy::Random => {
            let rng = rng.expect("RANDOM policy needs a generator");
            order.shuffle(rng);
        }
        Policy::None => order.clear(),
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn pos(i: usize) -> Pos {
        Pos::new(1, i)
    }

    fn store(policy: Policy) -> CacheStore {
        CacheStore::new(&[pos(0), pos(1), pos(2)], policy, None)
    }

    /// Fills grid `i` with `item` by running a full insert/release cycle.
    fn fill(store: &mut CacheStore, agent: AgentId, item: ItemId, now: Timestep) -> Pos {
        match store.insert(agent, item, now) {
            InsertResult::Write(p) => {
                store.release_all_locks(agent, item, p, now).unwrap();
                p
            }
            InsertResult::DirectToPort => panic!("expected a write grant"),
        }
    }

    #[test]
    fn check_hits_unlocked_item_and_takes_read_lock() {
        let mut s = store(Policy::Lru);
        let p5 = fill(&mut s, 1, 5, 1);
        fill(&mut s, 1, 7, 2);
        // Write-lock the grid holding item 7 via an insert of a new item:
        // first make the store full so insert must evict.
        fill(&mut s, 1, 9, 3);
        let w = s.insert(2, 11, 4);
        // LRU order: item 5 grid is oldest.
        assert_eq!(w, InsertResult::Write(p5));

        assert_eq!(s.check(3, 7, 5), CheckResult::Hit(pos(1)));
        assert!(s.grid_at(pos(1)).unwrap().read_locks.contains(&3));
        // Item 5 sits under agent 2's write lock now: unreadable.
        assert_eq!(s.check(4, 5, 5), CheckResult::Miss);
        s.verify_invariants().unwrap();
    }

    #[test]
    fn check_misses_on_empty_store_without_side_effects() {
        let mut s = store(Policy::Lru);
        assert_eq!(s.check(1, 3, 0), CheckResult::Miss);
        assert!(s.grids().iter().all(|g| g.unlocked() && g.item.is_none()));
    }

    #[test]
    fn insert_prefers_first_free_empty_grid() {
        let mut s = store(Policy::Lru);
        assert_eq!(s.insert(1, 9, 0), InsertResult::Write(pos(0)));
        assert!(s.incoming().contains(&9));
        assert_eq!(s.grid_at(pos(0)).unwrap().write_lock, Some(1));
        // Same item from another agent goes straight to the port.
        assert_eq!(s.insert(2, 9, 0), InsertResult::DirectToPort);
        // A different item gets the next empty grid.
        assert_eq!(s.insert(2, 4, 0), InsertResult::Write(pos(1)));
        s.verify_invariants().unwrap();
    }

    #[test]
    fn insert_of_cached_item_goes_to_port() {
        let mut s = store(Policy::Lru);
        fill(&mut s, 1, 9, 1);
        assert_eq!(s.insert(2, 9, 2), InsertResult::DirectToPort);
    }

    #[test]
    fn insert_with_everything_locked_goes_to_port() {
        let mut s = store(Policy::Lru);
        for (agent, item) in [(1, 10), (2, 11), (3, 12)] {
            fill(&mut s, agent, item, 1);
        }
        for (agent, item) in [(4, 10), (5, 11), (6, 12)] {
            assert!(matches!(s.check(agent, item, 2), CheckResult::Hit(_)));
        }
        assert_eq!(s.insert(7, 4, 3), InsertResult::DirectToPort);
        s.verify_invariants().unwrap();
    }

    #[test]
    fn writer_release_commits_item() {
        let mut s = store(Policy::Lru);
        let p = match s.insert(1, 9, 1) {
            InsertResult::Write(p) => p,
            other => panic!("{other:?}"),
        };
        s.release_all_locks(1, 9, p, 3).unwrap();
        let g = s.grid_at(p).unwrap();
        assert_eq!(g.item, Some(9));
        assert_eq!(g.write_lock, None);
        assert_eq!((g.inserted_at, g.last_used), (3, 3));
        assert!(s.incoming().is_empty());
    }

    #[test]
    fn reader_release_shrinks_lock_set_only() {
        let mut s = store(Policy::Lru);
        let p = fill(&mut s, 1, 9, 1);
        assert_eq!(s.check(2, 9, 2), CheckResult::Hit(p));
        assert_eq!(s.check(3, 9, 2), CheckResult::Hit(p));
        s.release_all_locks(2, 9, p, 3).unwrap();
        let g = s.grid_at(p).unwrap();
        assert_eq!(g.item, Some(9));
        assert_eq!(g.read_locks.len(), 1);
        assert!(g.read_locks.contains(&3));
    }

    #[test]
    fn release_without_lock_is_an_error() {
        let mut s = store(Policy::Lru);
        fill(&mut s, 1, 9, 1);
        assert!(matches!(
            s.release_all_locks(2, 9, pos(0), 2),
            Err(CacheError::LockNotHeld { agent: 2, .. })
        ));
    }

    #[test]
    fn evict_order_lru_by_last_used() {
        let mut grids: Vec<CacheGrid> = (0..3).map(|i| CacheGrid::new(pos(i))).collect();
        for (g, (item, last)) in grids.iter_mut().zip([(0, 10u64), (1, 3), (2, 7)]) {
            g.item = Some(item);
            g.last_used = last;
        }
        assert_eq!(evict_order(Policy::Lru, &grids, None), vec![1, 2, 0]);
    }

    #[test]
    fn evict_order_fifo_ties_by_position() {
        let mut grids: Vec<CacheGrid> = (0..3).map(|i| CacheGrid::new(pos(i))).collect();
        for (g, (item, ins)) in grids.iter_mut().zip([(0, 5u64), (1, 5), (2, 2)]) {
            g.item = Some(item);
            g.inserted_at = ins;
        }
        assert_eq!(evict_order(Policy::Fifo, &grids, None), vec![2, 0, 1]);
    }

    #[test]
    fn evict_order_random_is_seed_deterministic() {
        let mut grids: Vec<CacheGrid> = (0..8).map(|i| CacheGrid::new(pos(i))).collect();
        for (i, g) in grids.iter_mut().enumerate() {
            g.item = Some(i);
        }
        let mut r1 = ChaCha8Rng::seed_from_u64(99);
        let mut r2 = ChaCha8Rng::seed_from_u64(99);
        assert_eq!(
            evict_order(Policy::Random, &grids, Some(&mut r1)),
            evict_order(Policy::Random, &grids, Some(&mut r2))
        );
    }

    #[test]
    fn policy_none_never_hits_or_writes() {
        let mut s = store(Policy::None);
        assert_eq!(s.insert(1, 9, 0), InsertResult::DirectToPort);
        assert_eq!(s.check(1, 9, 1), CheckResult::Miss);
        assert_eq!(s.stored_item_count(), 0);
        assert!(s.incoming().is_empty());
    }

    #[test]
    fn miss_and_port_paths_leave_state_untouched() {
        let mut s = store(Policy::Fifo);
        fill(&mut s, 1, 5, 1);
        let before = format!("{:?}", s.grids());
        assert_eq!(s.check(2, 6, 2), CheckResult::Miss);
        assert_eq!(s.insert(2, 5, 2), InsertResult::DirectToPort);
        assert_eq!(format!("{:?}", s.grids()), before);
    }
}

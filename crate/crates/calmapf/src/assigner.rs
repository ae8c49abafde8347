//! The task assigner: owns the agent state machine and mediates every cache
//! interaction.
//!
//! Agent statuses, numbered for logs:
//! 0 shelf-bound (item not cached, fetch from shelf),
//! 1 cache-read-bound (read lock held, fetch from cache),
//! 2 cache-write-bound (write lock held, carry item to cache),
//! 3 port-bound without cache involvement,
//! 4 port-bound after a cache read or write.
//!
//! At every event the assigner first releases locks of agents that arrived at
//! their cache (writers commit their item), then walks all agents in id order
//! to hand out new locks, targets and tasks.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::cachestore::{CacheError, CacheStore, CheckResult, InsertResult};
use crate::gridmap::{CellKind, GridMap, Group, Pos};
use crate::taskgen::Task;
use crate::{AgentId, Timestep};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Status {
    ShelfBound = 0,
    CacheReadBound = 1,
    CacheWriteBound = 2,
    PortDirect = 3,
    PortBound = 4,
}

impl Status {
    pub fn code(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// How a delivered task was ultimately served.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Fulfillment {
    /// Fetched from the shelf and carried straight to the port.
    ShelfDirect,
    /// Fetched from the shelf and parked in a cache on the way.
    ShelfThenCacheWrite,
    /// Fetched from a cache under a read lock.
    CacheRead,
}

#[derive(Clone, Debug)]
pub struct AgentState {
    pub id: AgentId,
    /// Location at the last assigner event.
    pub start: Pos,
    pub target: Pos,
    pub status: Status,
    pub task: Option<Task>,
    pub group: usize,
    pub fulfillment: Fulfillment,
    pub assigned_at: Timestep,
    pub retired: bool,
}

/// One completed task, reported back to the simulation for accounting.
#[derive(Clone, Debug)]
pub struct Delivery {
    pub agent: AgentId,
    pub group: usize,
    pub task: Task,
    pub assigned_at: Timestep,
    pub delivered_at: Timestep,
    pub fulfillment: Fulfillment,
}

/// One line of the optional status-transition log.
#[derive(Clone, Copy, Debug)]
pub struct EventRecord {
    pub at: Timestep,
    pub agent: AgentId,
    pub old_status: u8,
    pub new_status: u8,
    pub target: Pos,
}

#[derive(Debug, Error)]
pub enum AssignError {
    #[error("group {group} queue is empty at initial assignment")]
    EmptyQueue { group: usize },
    #[error(transparent)]
    Cache(#[from] CacheError),
}

pub struct TaskAssigner {
    agents: Vec<AgentState>,
    ports: Vec<Pos>,
    events: Option<Vec<EventRecord>>,
    pub status1_entries: u64,
    pub status2_entries: u64,
}

impl TaskAssigner {
    /// Pops the first task for every agent. Caches start cold, so all agents
    /// begin shelf-bound toward their item's shelf.
    pub fn init(
        map: &GridMap,
        groups: &mut [Group],
        starts: &[Pos],
        log_events: bool,
    ) -> Result<Self, AssignError> {
        let mut group_of = vec![usize::MAX; starts.len()];
        for g in groups.iter() {
            for &a in &g.agents {
                group_of[a] = g.id;
            }
        }
        let mut agents = Vec::with_capacity(starts.len());
        for (id, &start) in starts.iter().enumerate() {
            let g = group_of[id];
            let task = groups[g]
                .queue
                .pop_front()
                .ok_or(AssignError::EmptyQueue { group: g })?;
            agents.push(AgentState {
                id,
                start,
                target: map.shelf_of_item(task.item),
                status: Status::ShelfBound,
                task: Some(task),
                group: g,
                fulfillment: Fulfillment::ShelfDirect,
                assigned_at: 0,
                retired: false,
            });
        }
        Ok(TaskAssigner {
            agents,
            ports: groups.iter().map(|g| g.port).collect(),
            events: log_events.then(Vec::new),
            status1_entries: 0,
            status2_entries: 0,
        })
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn events(&self) -> Option<&[EventRecord]> {
        self.events.as_deref()
    }

    pub fn all_retired(&self) -> bool {
        self.agents.iter().all(|a| a.retired)
    }

    /// Per-agent planning targets; retired agents park where they stand.
    pub fn targets(&self) -> Vec<Pos> {
        self.agents
            .iter()
            .map(|a| if a.retired { a.start } else { a.target })
            .collect()
    }

    /// Mirrors the executed configuration into the agent states.
    pub fn sync_positions(&mut self, config: &[Pos]) {
        for (agent, &p) in self.agents.iter_mut().zip(config) {
            agent.start = p;
        }
    }

    fn transition(&mut self, agent: AgentId, status: Status, target: Pos, now: Timestep) {
        let old = self.agents[agent].status;
        if status == Status::CacheReadBound && old != Status::CacheReadBound {
            self.status1_entries += 1;
        }
        if status == Status::CacheWriteBound && old != Status::CacheWriteBound {
            self.status2_entries += 1;
        }
        self.agents[agent].status = status;
        self.agents[agent].target = target;
        if let Some(events) = self.events.as_mut() {
            events.push(EventRecord {
                at: now,
                agent,
                old_status: old.code(),
                new_status: status.code(),
                target,
            });
        }
    }

    /// Applies a check/insert outcome: a positional result adopts
    /// `status_positional` and heads to that cell, a sentinel result adopts
    /// `status_sentinel` and heads to `sentinel_target`.
    pub fn check_target(
        &mut self,
        agent: AgentId,
        positional: Option<Pos>,
        status_sentinel: Status,
        status_positional: Status,
        sentinel_target: Pos,
        now: Timestep,
    ) {
        match positional {
            Some(pos) => self.transition(agent, status_positional, pos, now),
            None => self.transition(agent, status_sentinel, sentinel_target, now),
        }
    }

    /// First assigner pass: agents with a lock that reached their cache
    /// release it (writers commit) and turn toward their port.
    pub fn release_locks(
        &mut self,
        stores: &mut [CacheStore],
        now: Timestep,
    ) -> Result<(), AssignError> {
        for id in 0..self.agents.len() {
            let agent = &self.agents[id];
            if agent.retired || agent.start != agent.target {
                continue;
            }
            if matches!(agent.status, Status::CacheReadBound | Status::CacheWriteBound) {
                let item = agent.task.as_ref().expect("locked agent without task").item;
                let (group, at) = (agent.group, agent.target);
                stores[group].release_all_locks(id, item, at, now)?;
                let port = self.ports[group];
                self.transition(id, Status::PortBound, port, now);
            }
        }
        Ok(())
    }

    /// Second assigner pass: hand out locks, reroutes and fresh tasks.
    /// Returns the tasks delivered at this event.
    pub fn get_locks(
        &mut self,
        map: &GridMap,
        groups: &mut [Group],
        stores: &mut [CacheStore],
        now: Timestep,
    ) -> Vec<Delivery> {
        let mut deliveries = Vec::new();
        for id in 0..self.agents.len() {
            if self.agents[id].retired {
                continue;
            }
            let status = self.agents[id].status;
            let at_target = self.agents[id].start == self.agents[id].target;
            let group = self.agents[id].group;
            let item = self.agents[id].task.as_ref().map(|t| t.item);
            let port = self.ports[group];
            match status {
                Status::ShelfBound => {
                    let item = item.expect("shelf-bound agent without task");
                    if at_target {
                        // Item in hand; try to park it in the cache.
                        let res = stores[group].insert(id, item, now);
                        let positional = match res {
                            InsertResult::Write(p) => Some(p),
                            InsertResult::DirectToPort => None,
                        };
                        self.check_target(
                            id,
                            positional,
                            Status::PortDirect,
                            Status::CacheWriteBound,
                            port,
                            now,
                        );
                        if positional.is_some() {
                            self.agents[id].fulfillment = Fulfillment::ShelfThenCacheWrite;
                        }
                    } else {
                        // Still en route: another agent may have cached it.
                        let res = stores[group].check(id, item, now);
                        if let CheckResult::Hit(pos) = res {
                            self.check_target(
                                id,
                                Some(pos),
                                Status::ShelfBound,
                                Status::CacheReadBound,
                                self.agents[id].target,
                                now,
                            );
                            self.agents[id].fulfillment = Fulfillment::CacheRead;
                        }
                    }
                }
                Status::PortDirect => {
                    if at_target {
                        self.reach_port(map, groups, stores, id, now, &mut deliveries);
                    } else {
                        // Keep trying to shed the item into a cache en route.
                        let item = item.expect("port-bound agent without task");
                        let res = stores[group].insert(id, item, now);
                        if let InsertResult::Write(pos) = res {
                            self.check_target(
                                id,
                                Some(pos),
                                Status::PortDirect,
                                Status::CacheWriteBound,
                                port,
                                now,
                            );
                            self.agents[id].fulfillment = Fulfillment::ShelfThenCacheWrite;
                        }
                    }
                }
                Status::PortBound => {
                    if at_target {
                        self.reach_port(map, groups, stores, id, now, &mut deliveries);
                    }
                }
                Status::CacheReadBound | Status::CacheWriteBound => {}
            }
        }
        deliveries
    }

    /// Delivery at the port: record the finished task, pop the next one, and
    /// consult the cache for its first target. An empty queue retires the
    /// agent in place.
    fn reach_port(
        &mut self,
        map: &GridMap,
        groups: &mut [Group],
        stores: &mut [CacheStore],
        id: AgentId,
        now: Timestep,
        deliveries: &mut Vec<Delivery>,
    ) {
        let group = self.agents[id].group;
        let done = self.agents[id].task.take().expect("delivery without task");
        deliveries.push(Delivery {
            agent: id,
            group,
            task: done,
            assigned_at: self.agents[id].assigned_at,
            delivered_at: now,
            fulfillment: self.agents[id].fulfillment,
        });
        match groups[group].queue.pop_front() {
            None => {
                self.agents[id].retired = true;
                let here = self.agents[id].start;
                self.agents[id].target = here;
            }
            Some(task) => {
                let item = task.item;
                self.agents[id].task = Some(task);
                self.agents[id].assigned_at = now;
                self.agents[id].fulfillment = Fulfillment::ShelfDirect;
                let res = stores[group].check(id, item, now);
                let positional = match res {
                    CheckResult::Hit(p) => Some(p),
                    CheckResult::Miss => None,
                };
                self.check_target(
                    id,
                    positional,
                    Status::ShelfBound,
                    Status::CacheReadBound,
                    map.shelf_of_item(item),
                    now,
                );
                if positional.is_some() {
                    self.agents[id].fulfillment = Fulfillment::CacheRead;
                }
            }
        }
    }

    /// Structural agent/lock invariants, asserted at event boundaries in
    /// instrumented runs.
    pub fn check_invariants(&self, map: &GridMap, stores: &[CacheStore]) -> Result<(), String> {
        for agent in &self.agents {
            let (reads, writes) = stores[agent.group].lock_counts(agent.id);
            let expect = match agent.status {
                Status::CacheReadBound => (1, 0),
                Status::CacheWriteBound => (0, 1),
                _ => (0, 0),
            };
            if agent.retired {
                if (reads, writes) != (0, 0) {
                    return Err(format!("retired agent {} still holds locks", agent.id));
                }
                continue;
            }
            if (reads, writes) != expect {
                return Err(format!(
                    "agent {} status {} holds {reads} read / {writes} write locks",
                    agent.id, agent.status
                ));
            }
            if map.kind_at(agent.target) == CellKind::Shelf && (reads > 0 || writes > 0) {
                return Err(format!("agent {} targets a shelf while holding a lock", agent.id));
            }
            match agent.status {
                Status::ShelfBound => {
                    if map.kind_at(agent.target) != CellKind::Shelf {
                        return Err(format!(
                            "shelf-bound agent {} targets {:?}",
                            agent.id,
                            map.kind_at(agent.target)
                        ));
                    }
                }
                Status::CacheReadBound | Status::CacheWriteBound => {
                    let grid = stores[agent.group]
                        .grid_at(agent.target)
                        .ok_or_else(|| format!("agent {} targets a non-cache cell", agent.id))?;
                    if agent.status == Status::CacheReadBound {
                        if !grid.read_locks.contains(&agent.id) {
                            return Err(format!(
                                "agent {} read lock missing at {}",
                                agent.id, agent.target
                            ));
                        }
                        let item = agent.task.as_ref().unwrap().item;
                        if grid.item != Some(item) {
                            return Err(format!(
                                "read-locked grid {} lost item {item}",
                                agent.target
                            ));
                        }
                    } else if grid.write_lock != Some(agent.id) {
                        return Err(format!(
                            "agent {} write lock missing at {}",
                            agent.id, agent.target
                        ));
                    }
                }
                Status::PortDirect | Status::PortBound => {
                    if agent.target != self.ports[agent.group] {
                        return Err(format!("agent {} should target its port", agent.id));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cachestore::Policy;
    use crate::gridmap::{build_groups, GridMap, GroupMode};
    use crate::maps;
    use std::collections::VecDeque;

    fn setup(queue_items: &[usize], starts: &[Pos]) -> (GridMap, Vec<Group>, Vec<CacheStore>) {
        let mut map = GridMap::parse(maps::TOY).unwrap();
        map.assign_items(3);
        let mut groups = build_groups(&map, GroupMode::SinglePort, starts.len()).unwrap();
        groups[0].queue = queue_items
            .iter()
            .enumerate()
            .map(|(seq, &item)| Task { item, destination: groups[0].port, seq })
            .collect::<VecDeque<_>>();
        let stores = vec![CacheStore::new(&groups[0].caches, Policy::Lru, None)];
        (map, groups, stores)
    }

    #[test]
    fn init_sets_everyone_shelf_bound() {
        let (map, mut groups, _) = setup(&[0, 1, 2], &[Pos::new(2, 2), Pos::new(2, 3)]);
        let ta = TaskAssigner::init(&map, &mut groups, &[Pos::new(2, 2), Pos::new(2, 3)], false)
            .unwrap();
        for agent in ta.agents() {
            assert_eq!(agent.status, Status::ShelfBound);
            assert_eq!(
                agent.target,
                map.shelf_of_item(agent.task.as_ref().unwrap().item)
            );
        }
        assert_eq!(groups[0].queue.len(), 1);
    }

    #[test]
    fn init_with_short_queue_fails() {
        let (map, mut groups, _) = setup(&[0], &[Pos::new(2, 2), Pos::new(2, 3)]);
        let err = TaskAssigner::init(&map, &mut groups, &[Pos::new(2, 2), Pos::new(2, 3)], false);
        assert!(matches!(err, Err(AssignError::EmptyQueue { group: 0 })));
    }

    #[test]
    fn two_agents_may_share_a_shelf_target() {
        let (map, mut groups, _) = setup(&[2, 2], &[Pos::new(2, 2), Pos::new(2, 3)]);
        let ta = TaskAssigner::init(&map, &mut groups, &[Pos::new(2, 2), Pos::new(2, 3)], false)
            .unwrap();
        assert_eq!(ta.agents()[0].target, ta.agents()[1].target);
        assert_eq!(ta.agents()[0].status, Status::ShelfBound);
    }

    #[test]
    fn shelf_arrival_takes_write_lock_and_release_commits() {
        let (map, mut groups, mut stores) = setup(&[0, 1], &[Pos::new(2, 2)]);
        let item = 0;
        let shelf = map.shelf_of_item(item);
        let mut ta = TaskAssigner::init(&map, &mut groups, &[Pos::new(2, 2)], false).unwrap();

        // Walk the agent to its shelf by fiat and run an event.
        ta.sync_positions(&[shelf]);
        ta.release_locks(&mut stores, 1).unwrap();
        let done = ta.get_locks(&map, &mut groups, &mut stores, 1);
        assert!(done.is_empty());
        assert_eq!(ta.agents()[0].status, Status::CacheWriteBound);
        let cache = ta.agents()[0].target;
        assert_eq!(stores[0].grid_at(cache).unwrap().write_lock, Some(0));
        ta.check_invariants(&map, &stores).unwrap();

        // Arrive at the cache: the write commits and the agent heads to port.
        ta.sync_positions(&[cache]);
        ta.release_locks(&mut stores, 2).unwrap();
        ta.get_locks(&map, &mut groups, &mut stores, 2);
        assert_eq!(ta.agents()[0].status, Status::PortBound);
        assert_eq!(stores[0].grid_at(cache).unwrap().item, Some(item));
        assert_eq!(stores[0].grid_at(cache).unwrap().write_lock, None);
        ta.check_invariants(&map, &stores).unwrap();

        // Arrive at the port: delivery counted, next task popped, and since
        // item 1 is not cached the agent goes shelf-bound again.
        let port = groups[0].port;
        ta.sync_positions(&[port]);
        ta.release_locks(&mut stores, 3).unwrap();
        let done = ta.get_locks(&map, &mut groups, &mut stores, 3);
        assert_eq!(done.len(), 1);
        assert_eq!(done[0].fulfillment, Fulfillment::ShelfThenCacheWrite);
        assert_eq!(ta.agents()[0].status, Status::ShelfBound);
        assert_eq!(ta.agents()[0].target, map.shelf_of_item(1));
    }

    #[test]
    fn port_pop_hits_warm_cache() {
        let (map, mut groups, mut stores) = setup(&[0, 0], &[Pos::new(2, 2)]);
        // Warm the cache with item 0 out of band.
        let pos = match stores[0].insert(9, 0, 0) {
            InsertResult::Write(p) => p,
            other => panic!("{other:?}"),
        };
        stores[0].release_all_locks(9, 0, pos, 0).unwrap();

        let mut ta = TaskAssigner::init(&map, &mut groups, &[Pos::new(2, 2)], false).unwrap();
        // En-route recheck upgrades the shelf-bound agent to a cache read.
        ta.release_locks(&mut stores, 1).unwrap();
        ta.get_locks(&map, &mut groups, &mut stores, 1);
        assert_eq!(ta.agents()[0].status, Status::CacheReadBound);
        assert_eq!(ta.agents()[0].target, pos);
        ta.check_invariants(&map, &stores).unwrap();

        // Read at the cache, deliver at the port, pop the next task: item 0
        // is still cached, so the agent goes straight back to reading.
        ta.sync_positions(&[pos]);
        ta.release_locks(&mut stores, 2).unwrap();
        ta.get_locks(&map, &mut groups, &mut stores, 2);
        assert_eq!(ta.agents()[0].status, Status::PortBound);

        ta.sync_positions(&[groups[0].port]);
        ta.release_locks(&mut stores, 3).unwrap();
        let done = ta.get_locks(&map, &mut groups, &mut stores, 3);
        assert_eq!(done[0].fulfillment, Fulfillment::CacheRead);
        assert_eq!(ta.agents()[0].status, Status::CacheReadBound);
    }

    #[test]
    fn insert_refusal_sends_agent_direct_to_port() {
        // Two agents after the same item: the second to reach the shelf finds
        // the item incoming and carries its copy straight to the port.
        let (map, mut groups, mut stores) = setup(&[0, 0, 1, 1], &[Pos::new(2, 2), Pos::new(2, 3)]);
        let shelf = map.shelf_of_item(0);
        let mut ta =
            TaskAssigner::init(&map, &mut groups, &[Pos::new(2, 2), Pos::new(2, 3)], false)
                .unwrap();
        ta.sync_positions(&[shelf, Pos::new(2, 3)]);
        ta.release_locks(&mut stores, 1).unwrap();
        ta.get_locks(&map, &mut groups, &mut stores, 1);
        assert_eq!(ta.agents()[0].status, Status::CacheWriteBound);

        ta.sync_positions(&[ta.agents()[0].target, shelf]);
        ta.release_locks(&mut stores, 2).unwrap();
        ta.get_locks(&map, &mut groups, &mut stores, 2);
        // Agent 0 committed this very event, so agent 1's insert finds the
        // item cached and gives up on writing.
        assert_eq!(ta.agents()[1].status, Status::PortDirect);
        assert_eq!(ta.agents()[1].target, groups[0].port);
        assert_eq!(ta.agents()[1].fulfillment, Fulfillment::ShelfDirect);
        ta.check_invariants(&map, &stores).unwrap();
    }

    #[test]
    fn check_target_maps_sentinel_and_positional() {
        let (map, mut groups, _) = setup(&[0, 1], &[Pos::new(2, 2)]);
        let mut ta = TaskAssigner::init(&map, &mut groups, &[Pos::new(2, 2)], false).unwrap();
        let shelf = map.shelf_of_item(0);

        ta.check_target(0, None, Status::ShelfBound, Status::CacheReadBound, shelf, 1);
        assert_eq!(ta.agents()[0].status, Status::ShelfBound);
        assert_eq!(ta.agents()[0].target, shelf);

        let cache = Pos::new(1, 3);
        ta.check_target(0, Some(cache), Status::ShelfBound, Status::CacheReadBound, shelf, 1);
        assert_eq!(ta.agents()[0].status, Status::CacheReadBound);
        assert_eq!(ta.agents()[0].target, cache);

        ta.check_target(0, None, Status::PortDirect, Status::CacheWriteBound, groups[0].port, 1);
        assert_eq!(ta.agents()[0].status, Status::PortDirect);
        assert_eq!(ta.agents()[0].target, groups[0].port);
    }

    #[test]
    fn queue_exhaustion_retires_agent_in_place() {
        let (map, mut groups, mut stores) = setup(&[0], &[Pos::new(2, 2)]);
        let mut ta = TaskAssigner::init(&map, &mut groups, &[Pos::new(2, 2)], false).unwrap();
        let shelf = map.shelf_of_item(0);
        ta.sync_positions(&[shelf]);
        ta.release_locks(&mut stores, 1).unwrap();
        ta.get_locks(&map, &mut groups, &mut stores, 1);
        let cache = ta.agents()[0].target;
        ta.sync_positions(&[cache]);
        ta.release_locks(&mut stores, 2).unwrap();
        ta.get_locks(&map, &mut groups, &mut stores, 2);
        ta.sync_positions(&[groups[0].port]);
        ta.release_locks(&mut stores, 3).unwrap();
        let done = ta.get_locks(&map, &mut groups, &mut stores, 3);
        assert_eq!(done.len(), 1);
        assert!(ta.agents()[0].retired);
        assert!(ta.all_retired());
        assert_eq!(ta.targets()[0], groups[0].port);
        ta.check_invariants(&map, &stores).unwrap();
    }

    #[test]
    fn event_log_records_transitions() {
        let (map, mut groups, mut stores) = setup(&[0, 1], &[Pos::new(2, 2)]);
        let mut ta = TaskAssigner::init(&map, &mut groups, &[Pos::new(2, 2)], true).unwrap();
        let shelf = map.shelf_of_item(0);
        ta.sync_positions(&[shelf]);
        ta.release_locks(&mut stores, 1).unwrap();
        ta.get_locks(&map, &mut groups, &mut stores, 1);
        let events = ta.events().unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!((events[0].old_status, events[0].new_status), (0, 2));
    }
}

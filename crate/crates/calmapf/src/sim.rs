//! The lifelong loop: plan one step, execute it, account waits, fire the
//! assigner event, repeat until every queued task is delivered.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::assigner::{AssignError, EventRecord, Fulfillment, TaskAssigner};
use crate::cachestore::{CacheStore, Policy};
use crate::gridmap::{build_groups, CellKind, GridMap, GroupMode, MapError, Pos};
use crate::rng::{stream_rng, Stream};
use crate::solver::{validate_step, Planner};
use crate::taskgen::{self, FrequencyTable, Task, TaskGenError};
use crate::{ItemId, Timestep};

/// Which task distribution feeds the queues.
#[derive(Clone, Debug)]
pub enum DistSpec {
    Mk { window: usize, kinds: usize },
    Zhang,
    Empirical(FrequencyTable),
}

impl DistSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            DistSpec::Mk { .. } => "mk",
            DistSpec::Zhang => "zhang",
            DistSpec::Empirical(_) => "file",
        }
    }
}

/// Everything one run needs. Cross-field validity is checked inside
/// [`run`] before the loop starts.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub map: GridMap,
    /// Active cache count; `None` keeps every cache on the map.
    pub cache_count: Option<usize>,
    pub agents: usize,
    pub mode: GroupMode,
    pub policy: Policy,
    pub dist: DistSpec,
    /// Total queue length, split as evenly as possible across groups.
    pub queue_len: usize,
    /// Overrides the even split with an explicit per-group length.
    pub queue_per_group: Option<usize>,
    pub seed: u64,
    /// Abort threshold; defaults to `100 * (rows + cols) * total queue length`.
    pub step_cap: Option<u64>,
    pub time_budget: Option<Duration>,
    /// Validate every step and every event invariant while running.
    pub validate: bool,
    pub log_paths: bool,
    pub log_events: bool,
}

impl SimConfig {
    pub fn new(map: GridMap, agents: usize, mode: GroupMode, policy: Policy, dist: DistSpec) -> Self {
        SimConfig {
            map,
            cache_count: None,
            agents,
            mode,
            policy,
            dist,
            queue_len: 1000,
            queue_per_group: None,
            seed: 1,
            step_cap: None,
            time_budget: None,
            validate: cfg!(debug_assertions),
            log_paths: false,
            log_events: false,
        }
    }

    pub fn resolved_step_cap(&self, total_queue: usize) -> u64 {
        self.step_cap.unwrap_or_else(|| {
            100 * (self.map.rows() + self.map.cols()) as u64 * total_queue.max(1) as u64
        })
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    TaskGen(#[from] TaskGenError),
    #[error(transparent)]
    Assign(#[from] AssignError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no progress after {steps} steps; livelock suspected")]
    LivelockSuspected { steps: u64 },
    #[error("wall-clock budget exhausted after {steps} steps")]
    TimeoutExceeded { steps: u64 },
    #[error("invariant violated at step {step}: {detail}")]
    Validation { step: u64, detail: String },
}

/// One delivered task in the per-task log.
#[derive(Clone, Debug)]
pub struct TaskRecord {
    pub group: usize,
    pub seq: usize,
    pub item: ItemId,
    pub assigned_at: Timestep,
    pub delivered_at: Timestep,
    pub fulfillment: Fulfillment,
}

/// Everything a run reports.
#[derive(Clone, Debug)]
pub struct RunMetrics {
    /// Timestep of the last delivery.
    pub makespan: Timestep,
    pub deliveries: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub hit_rate: f64,
    pub status1_entries: u64,
    pub status2_entries: u64,
    pub total_waits: u64,
    pub rows: usize,
    pub cols: usize,
    /// Dense row-major wait counts per cell.
    pub wait_counts: Vec<u64>,
    pub per_task: Vec<TaskRecord>,
    /// Configurations per timestep (index 0 = starts) when path logging is on.
    pub paths: Option<Vec<Vec<Pos>>>,
    pub events: Option<Vec<EventRecord>>,
    /// Items left in cache grids at termination, summed over groups.
    pub cached_items_at_end: usize,
}

impl RunMetrics {
    /// Per-cell wait frequency: wait count divided by makespan.
    pub fn heatmap(&self) -> Vec<f64> {
        if self.makespan == 0 {
            return vec![0.0; self.wait_counts.len()];
        }
        self.wait_counts
            .iter()
            .map(|&w| w as f64 / self.makespan as f64)
            .collect()
    }
}

/// Seeded distinct start cells, drawn uniformly from the aisle cells.
pub fn sample_starts(map: &GridMap, agents: usize, seed: u64) -> Result<Vec<Pos>, SimError> {
    let mut aisles: Vec<Pos> = (0..map.rows())
        .flat_map(|r| (0..map.cols()).map(move |c| Pos::new(r, c)))
        .filter(|&p| map.kind_at(p) == CellKind::Aisle)
        .collect();
    if agents > aisles.len() {
        return Err(SimError::Config(format!(
            "{agents} agents need {agents} distinct aisle start cells, map has {}",
            aisles.len()
        )));
    }
    let mut rng = stream_rng(seed, Stream::Starts, 0);
    aisles.shuffle(&mut rng);
    aisles.truncate(agents);
    Ok(aisles)
}

/// Runs one simulation to completion. Deterministic for a given config.
pub fn run(config: &SimConfig) -> Result<RunMetrics, SimError> {
    if config.agents == 0 {
        return Err(SimError::Config("agent count must be at least 1".into()));
    }
    if config.queue_len == 0 && config.queue_per_group.is_none() {
        return Err(SimError::Config("queue length must be at least 1".into()));
    }

    let mut map = config.map.clone();
    if let Some(n) = config.cache_count {
        map = map.select_cache_subset(n)?;
    }
    map.assign_items(config.seed);

    let mut groups = build_groups(&map, config.mode, config.agents)?;
    let universe = map.item_count();

    // Per-group queue lengths: an explicit per-group override, or the total
    // split as evenly as possible with earlier groups taking the remainder.
    let group_count = groups.len();
    let lens: Vec<usize> = match config.queue_per_group {
        Some(per) => vec![per; group_count],
        None => {
            let base = config.queue_len / group_count;
            let extra = config.queue_len % group_count;
            (0..group_count).map(|g| base + usize::from(g < extra)).collect()
        }
    };
    for group in groups.iter_mut() {
        let len = lens[group.id];
        if len == 0 {
            return Err(SimError::Config(format!(
                "group {} gets an empty queue; raise --queue-len",
                group.id
            )));
        }
        let mut rng = stream_rng(config.seed, Stream::Distribution, group.id as u64);
        let items = match &config.dist {
            DistSpec::Mk { window, kinds } => {
                taskgen::gen_mk(*window, *kinds, len, universe, &mut rng)?
            }
            DistSpec::Zhang => taskgen::gen_zhang(len, universe, &mut rng)?,
            DistSpec::Empirical(table) => {
                if !table.is_normalized() {
                    return Err(SimError::Config("frequency table is not normalized".into()));
                }
                taskgen::gen_empirical(table, len, &mut rng)
            }
        };
        group.queue = items
            .into_iter()
            .enumerate()
            .map(|(seq, item)| Task { item, destination: group.port, seq })
            .collect();
    }
    let total_tasks: usize = lens.iter().sum();

    let starts = sample_starts(&map, config.agents, config.seed)?;
    let mut stores: Vec<CacheStore> = groups
        .iter()
        .map(|g| {
            let rng = (config.policy == Policy::Random)
                .then(|| stream_rng(config.seed, Stream::Policy, g.id as u64));
            CacheStore::new(&g.caches, config.policy, rng)
        })
        .collect();

    let mut ta = TaskAssigner::init(&map, &mut groups, &starts, config.log_events)?;
    let mut planner = Planner::new(config.agents, config.seed);
    let mut positions = starts;
    let mut paths = config.log_paths.then(|| vec![positions.clone()]);

    let step_cap = config.resolved_step_cap(total_tasks);
    let deadline = config.time_budget.map(|d| Instant::now() + d);
    let stall_horizon = 50 * (map.rows() + map.cols()) as u64;
    let mut stall_warned = vec![false; config.agents];

    let mut wait_counts = vec![0u64; map.rows() * map.cols()];
    let mut total_waits = 0u64;
    let mut per_task: Vec<TaskRecord> = Vec::with_capacity(total_tasks);
    let mut delivered = 0u64;
    let mut makespan = 0;
    let mut now: Timestep = 0;

    while delivered < total_tasks as u64 {
        now += 1;
        if now > step_cap {
            return Err(SimError::LivelockSuspected { steps: now - 1 });
        }
        if let Some(deadline) = deadline {
            if Instant::now() > deadline {
                return Err(SimError::TimeoutExceeded { steps: now - 1 });
            }
        }

        let targets = ta.targets();
        let step = planner.plan_step(&map, &positions, &targets);
        if config.validate {
            validate_step(&map, &step).map_err(|c| SimError::Validation {
                step: now,
                detail: c.to_string(),
            })?;
        }
        for (i, agent) in ta.agents().iter().enumerate() {
            if !agent.retired && step.to[i] == step.from[i] {
                wait_counts[map.index(step.to[i])] += 1;
                total_waits += 1;
            }
        }
        planner.update_priorities(&step.to, &targets);
        for (i, warned) in stall_warned.iter_mut().enumerate() {
            let off = planner.priorities().steps_off_target(i);
            if off > stall_horizon && !*warned {
                tracing::warn!(agent = i, steps = off, "agent far beyond expected travel time");
                *warned = true;
            } else if off == 0 {
                *warned = false;
            }
        }
        positions = step.to;
        if let Some(paths) = paths.as_mut() {
            paths.push(positions.clone());
        }

        ta.sync_positions(&positions);
        ta.release_locks(&mut stores, now)?;
        let deliveries = ta.get_locks(&map, &mut groups, &mut stores, now);
        for d in deliveries {
            delivered += 1;
            makespan = now;
            let hit = d.fulfillment == Fulfillment::CacheRead;
            stores[d.group].record_fulfillment(hit);
            per_task.push(TaskRecord {
                group: d.group,
                seq: d.task.seq,
                item: d.task.item,
                assigned_at: d.assigned_at,
                delivered_at: d.delivered_at,
                fulfillment: d.fulfillment,
            });
        }

        if config.validate {
            ta.check_invariants(&map, &stores).map_err(|detail| SimError::Validation {
                step: now,
                detail,
            })?;
            for store in &stores {
                store.verify_invariants().map_err(|detail| SimError::Validation {
                    step: now,
                    detail,
                })?;
            }
        }
    }

    let cache_hits: u64 = stores.iter().map(|s| s.hits()).sum();
    let cache_misses: u64 = stores.iter().map(|s| s.misses()).sum();
    debug_assert_eq!(cache_hits + cache_misses, delivered);
    let cached_items_at_end = stores.iter().map(|s| s.stored_item_count()).sum();

    Ok(RunMetrics {
        makespan,
        deliveries: delivered,
        cache_hits,
        cache_misses,
        hit_rate: cache_hits as f64 / delivered as f64,
        status1_entries: ta.status1_entries,
        status2_entries: ta.status2_entries,
        total_waits,
        rows: map.rows(),
        cols: map.cols(),
        wait_counts,
        per_task,
        paths,
        events: ta.events().map(|e| e.to_vec()),
        cached_items_at_end,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps;

    fn toy_config(policy: Policy, agents: usize, queue_len: usize) -> SimConfig {
        let map = GridMap::parse(maps::TOY).unwrap();
        let mut cfg = SimConfig::new(
            map,
            agents,
            GroupMode::SinglePort,
            policy,
            DistSpec::Mk { window: 10, kinds: 2 },
        );
        cfg.queue_len = queue_len;
        cfg.validate = true;
        cfg
    }

    #[test]
    fn one_agent_one_task_matches_hand_trace() {
        // Independent oracle: with one agent and an LRU cache, the makespan
        // is d(start, shelf) + d(shelf, cache chosen) + d(cache, port).
        let mut cfg = toy_config(Policy::Lru, 1, 1);
        cfg.log_paths = true;
        cfg.seed = 12;
        let metrics = run(&cfg).unwrap();
        assert_eq!(metrics.deliveries, 1);

        // Recover the actual route from the path log.
        let paths = metrics.paths.as_ref().unwrap();
        let mut map = cfg.map.clone();
        map.assign_items(cfg.seed);
        let start = paths[0][0];
        let task_record = &metrics.per_task[0];
        let shelf = map.shelf_of_item(task_record.item);
        let visited_cache = paths
            .iter()
            .map(|c| c[0])
            .find(|&p| map.caches().contains(&p))
            .expect("route should pass a cache");
        let expect = map.shortest_dist(shelf).get(start)
            + map.shortest_dist(visited_cache).get(shelf)
            + map.shortest_dist(map.ports()[0]).get(visited_cache);
        assert_eq!(metrics.makespan, expect as u64);
        assert_eq!(task_record.fulfillment, Fulfillment::ShelfThenCacheWrite);
    }

    #[test]
    fn one_agent_no_cache_goes_straight_to_port() {
        let mut cfg = toy_config(Policy::None, 1, 1);
        cfg.log_paths = true;
        cfg.seed = 12;
        let metrics = run(&cfg).unwrap();
        let paths = metrics.paths.as_ref().unwrap();
        let mut map = cfg.map.clone();
        map.assign_items(cfg.seed);
        let start = paths[0][0];
        let shelf = map.shelf_of_item(metrics.per_task[0].item);
        let expect =
            map.shortest_dist(shelf).get(start) + map.shortest_dist(map.ports()[0]).get(shelf);
        assert_eq!(metrics.makespan, expect as u64);
        assert_eq!(metrics.hit_rate, 0.0);
    }

    #[test]
    fn lru_records_cache_reads_where_none_cannot() {
        let mut none = toy_config(Policy::None, 2, 30);
        none.dist = DistSpec::Mk { window: 30, kinds: 1 };
        let mut lru = toy_config(Policy::Lru, 2, 30);
        lru.dist = DistSpec::Mk { window: 30, kinds: 1 };

        let m_none = run(&none).unwrap();
        let m_lru = run(&lru).unwrap();
        assert_eq!(m_none.cache_hits, 0);
        assert_eq!(m_none.status1_entries, 0);
        assert_eq!(m_none.status2_entries, 0);
        assert_eq!(m_none.cached_items_at_end, 0);
        assert!(m_lru.cache_hits > 0);
    }

    #[test]
    fn metrics_are_conserved_and_deterministic() {
        let cfg = toy_config(Policy::Fifo, 3, 24);
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a.deliveries, 24);
        assert_eq!(a.cache_hits + a.cache_misses, a.deliveries);
        assert_eq!(a.wait_counts.iter().sum::<u64>(), a.total_waits);
        assert_eq!(a.makespan, b.makespan);
        assert_eq!(a.cache_hits, b.cache_hits);
        assert_eq!(a.per_task.len(), b.per_task.len());
        // Heatmap conservation: frequencies times makespan give back waits.
        let heat: f64 = a.heatmap().iter().sum::<f64>() * a.makespan as f64;
        assert!((heat - a.total_waits as f64).abs() < 1e-6);
    }

    #[test]
    fn seeds_never_violate_invariants() {
        for seed in 0..100 {
            let mut cfg = toy_config(Policy::Lru, 2, 10);
            cfg.seed = seed;
            let metrics = run(&cfg).unwrap();
            assert_eq!(metrics.deliveries, 10);
        }
    }

    #[test]
    fn step_cap_aborts_with_livelock_error() {
        let mut cfg = toy_config(Policy::Lru, 1, 4);
        cfg.step_cap = Some(1);
        assert!(matches!(run(&cfg), Err(SimError::LivelockSuspected { .. })));
    }

    #[test]
    fn zero_time_budget_times_out() {
        let mut cfg = toy_config(Policy::Lru, 1, 4);
        cfg.time_budget = Some(Duration::ZERO);
        assert!(matches!(run(&cfg), Err(SimError::TimeoutExceeded { .. })));
    }

    #[test]
    fn rejects_invalid_configs_before_running() {
        let map = GridMap::parse(&maps::warehouse_multi()).unwrap();
        let mut cfg = SimConfig::new(
            map,
            6,
            GroupMode::MultiPort,
            Policy::Lru,
            DistSpec::Mk { window: 200, kinds: 20 },
        );
        assert!(matches!(run(&cfg), Err(SimError::Map(MapError::IndivisibleAgents { .. }))));
        cfg.agents = 8;
        cfg.cache_count = Some(17);
        assert!(matches!(run(&cfg), Err(SimError::Map(MapError::InvalidCacheCount { .. }))));
    }

    #[test]
    fn queue_split_is_even_with_remainder_forward() {
        let map = GridMap::parse(&maps::warehouse_multi()).unwrap();
        let mut cfg = SimConfig::new(
            map,
            4,
            GroupMode::MultiPort,
            Policy::Lru,
            DistSpec::Mk { window: 200, kinds: 1 },
        );
        cfg.queue_len = 10;
        cfg.seed = 3;
        let metrics = run(&cfg).unwrap();
        assert_eq!(metrics.deliveries, 10);
        let mut per_group = [0u64; 4];
        for t in &metrics.per_task {
            per_group[t.group] += 1;
        }
        assert_eq!(per_group, [3, 3, 2, 2]);
    }

    #[test]
    fn per_group_override_takes_precedence() {
        let map = GridMap::parse(&maps::warehouse_multi()).unwrap();
        let mut cfg = SimConfig::new(
            map,
            4,
            GroupMode::MultiPort,
            Policy::Lru,
            DistSpec::Mk { window: 200, kinds: 1 },
        );
        cfg.queue_len = 0;
        cfg.queue_per_group = Some(2);
        let metrics = run(&cfg).unwrap();
        assert_eq!(metrics.deliveries, 8);
    }
}

//! Deterministic discrete-time simulator for cache-augmented lifelong
//! multi-agent path finding on warehouse grid maps.
//!
//! Agents fetch items from shelves or from intermediate cache grids that sit
//! near the unloading ports. A lock-protected cache store, a five-state task
//! assigner, and a one-step priority-inheritance planner drive the lifelong
//! loop. Everything is seeded and reproducible: the same configuration always
//! produces the same step log and the same metrics.
//!
//! Module map:
//! - [`gridmap`]: map parsing, the movement graph, item placement, grouping.
//! - [`cachestore`]: per-group cache grids, read/write locks, eviction.
//! - [`taskgen`]: seeded task-queue generators and frequency-CSV ingestion.
//! - [`solver`]: one-step joint planner plus the independent step validator.
//! - [`assigner`]: the task assigner's agent state machine.
//! - [`sim`]: the lifelong loop, metrics, and invariant instrumentation.
//! - [`logs`]: path logs, metrics JSON, CSV outputs, log re-validation.
//! - [`maps`]: built-in map layouts.

pub mod assigner;
pub mod cachestore;
pub mod gridmap;
pub mod logs;
pub mod maps;
pub mod rng;
pub mod sim;
pub mod solver;
pub mod taskgen;

/// Agent identifier; agents are numbered `0..N` and planned in id order on ties.
pub type AgentId = usize;
/// Item kind index in `[0, M)` where `M` is the number of shelves.
pub type ItemId = usize;
/// Discrete simulation time. One step moves every agent at most one cell.
pub type Timestep = u64;

pub use gridmap::{GridMap, Pos};

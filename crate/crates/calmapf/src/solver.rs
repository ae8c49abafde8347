//! One-step joint motion planning with priority inheritance, plus an
//! independent step validator.
//!
//! Each call to [`Planner::plan_step`] produces one synchronous joint move:
//! agents are processed in descending priority, each tries its successor
//! cells closest-to-target first, and an agent that wants an occupied cell
//! recursively pushes the occupant. An agent whose push chain dead-ends waits
//! in place.
//!
//! Head-on meetings in narrow corridors would deadlock under plain pushing,
//! so the planner carries the swap refinement: when an agent's best move is
//! blocked by an opposing agent that has no room to sidestep, the blocked
//! agent reverses its preference order (retreating toward open space) and
//! pulls the opponent along into its vacated cell.
//!
//! Successor preference is distance-to-target first. Ties take a seeded
//! per-step jitter (below the integer distance spacing, so it never reorders
//! distinct distances) with a fixed clockwise direction order as the final
//! fallback. Pure fixed-order tie-breaking turns symmetric congestion into
//! permanent two-step oscillations; the jitter breaks those cycles while the
//! generator stays a deterministic function of (config, targets, priorities,
//! seed).

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::gridmap::{DistField, GridMap, Pos};
use crate::rng::{stream_rng, Stream};
use crate::AgentId;

/// Dynamic agent priorities: a distinct base fraction per agent, bumped every
/// step the agent is off target and reset on arrival.
#[derive(Clone, Debug)]
pub struct PriorityState {
    values: Vec<f64>,
    n: usize,
}

impl PriorityState {
    pub fn new(agent_count: usize) -> Self {
        PriorityState {
            values: (0..agent_count).map(|i| i as f64 / agent_count as f64).collect(),
            n: agent_count,
        }
    }

    /// Bump agents still off target, reset agents that arrived.
    pub fn update(&mut self, config: &[Pos], targets: &[Pos]) {
        for i in 0..self.values.len() {
            if config[i] == targets[i] {
                self.values[i] = i as f64 / self.n as f64;
            } else {
                self.values[i] += 1.0;
            }
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Steps the agent has spent off target since its last arrival.
    pub fn steps_off_target(&self, agent: AgentId) -> u64 {
        (self.values[agent] - agent as f64 / self.n as f64).round() as u64
    }
}

/// One synchronous joint move of all agents.
#[derive(Clone, Debug)]
pub struct JointStep {
    pub from: Vec<Pos>,
    pub to: Vec<Pos>,
}

/// A violated movement rule, named for diagnostics.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Conflict {
    Vertex { agents: (AgentId, AgentId), at: Pos },
    Swap { agents: (AgentId, AgentId) },
    IllegalMove { agent: AgentId, from: Pos, to: Pos },
}

impl fmt::Display for Conflict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Conflict::Vertex { agents, at } => {
                write!(f, "vertex conflict: agents {} and {} both enter {at}", agents.0, agents.1)
            }
            Conflict::Swap { agents } => {
                write!(f, "swap conflict: agents {} and {} exchange cells", agents.0, agents.1)
            }
            Conflict::IllegalMove { agent, from, to } => {
                write!(f, "illegal move: agent {agent} from {from} to {to}")
            }
        }
    }
}

/// Checks one joint step against the three step invariants: unit/wait moves
/// only, no two agents on one cell, no pairwise exchange.
pub fn validate_step(map: &GridMap, step: &JointStep) -> Result<(), Conflict> {
    assert_eq!(step.from.len(), step.to.len());
    for (i, (&f, &t)) in step.from.iter().zip(&step.to).enumerate() {
        if !map.move_legal(f, t) {
            return Err(Conflict::IllegalMove { agent: i, from: f, to: t });
        }
    }
    let mut seen: HashMap<Pos, AgentId> = HashMap::with_capacity(step.to.len());
    for (i, &t) in step.to.iter().enumerate() {
        if let Some(&j) = seen.get(&t) {
            return Err(Conflict::Vertex { agents: (j, i), at: t });
        }
        seen.insert(t, i);
    }
    let from_of: HashMap<Pos, AgentId> =
        step.from.iter().enumerate().map(|(i, &f)| (f, i)).collect();
    for (i, &t) in step.to.iter().enumerate() {
        if let Some(&j) = from_of.get(&t) {
            if j != i && step.to[j] == step.from[i] {
                return Err(Conflict::Swap { agents: (i.min(j), i.max(j)) });
            }
        }
    }
    Ok(())
}

/// Checks a standalone configuration: traversable cells, pairwise distinct.
pub fn validate_config(map: &GridMap, config: &[Pos]) -> Result<(), Conflict> {
    let mut seen: HashMap<Pos, AgentId> = HashMap::with_capacity(config.len());
    for (i, &p) in config.iter().enumerate() {
        if !map.is_traversable(p) {
            return Err(Conflict::IllegalMove { agent: i, from: p, to: p });
        }
        if let Some(&j) = seen.get(&p) {
            return Err(Conflict::Vertex { agents: (j, i), at: p });
        }
        seen.insert(p, i);
    }
    Ok(())
}

/// The step generator. Owns the priority state and a cache of breadth-first
/// distance fields, one per target cell ever requested.
pub struct Planner {
    prio: PriorityState,
    dist: HashMap<Pos, DistField>,
    ties: ChaCha8Rng,
}

impl Planner {
    pub fn new(agent_count: usize, seed: u64) -> Self {
        Planner {
            prio: PriorityState::new(agent_count),
            dist: HashMap::new(),
            ties: stream_rng(seed, Stream::SolverTies, 0),
        }
    }

    pub fn priorities(&self) -> &PriorityState {
        &self.prio
    }

    pub fn update_priorities(&mut self, config: &[Pos], targets: &[Pos]) {
        self.prio.update(config, targets);
    }

    /// Plans one joint step toward `targets`. Always returns a complete step;
    /// an agent with no usable move waits in place.
    pub fn plan_step(&mut self, map: &GridMap, config: &[Pos], targets: &[Pos]) -> JointStep {
        let n = config.len();
        assert_eq!(targets.len(), n);

        // Distance fields for every distinct live target. Agents already at
        // their target need no field: staying costs 0, any neighbor costs 1.
        for i in 0..n {
            if targets[i] != config[i] && !self.dist.contains_key(&targets[i]) {
                self.dist.insert(targets[i], map.shortest_dist(targets[i]));
            }
        }
        let fields: Vec<Option<&DistField>> = (0..n)
            .map(|i| {
                if targets[i] == config[i] {
                    None
                } else {
                    Some(&self.dist[&targets[i]])
                }
            })
            .collect();

        let mut order: Vec<AgentId> = (0..n).collect();
        order.sort_unstable_by(|&a, &b| {
            self.prio.values[b].partial_cmp(&self.prio.values[a]).unwrap()
        });

        let mut ctx = StepCtx {
            map,
            config,
            targets,
            fields: &fields,
            ties: &mut self.ties,
            occupied: vec![None; map.rows() * map.cols()],
            reserved: vec![None; map.rows() * map.cols()],
            to: vec![None; n],
        };
        for (i, &p) in config.iter().enumerate() {
            ctx.occupied[map.index(p)] = Some(i);
        }
        for &agent in &order {
            if ctx.to[agent].is_none() {
                ctx.pibt(agent);
            }
        }

        let to: Vec<Pos> = ctx
            .to
            .into_iter()
            .enumerate()
            .map(|(i, t)| t.unwrap_or_else(|| panic!("agent {i} left unassigned")))
            .collect();
        JointStep { from: config.to_vec(), to }
    }
}

struct StepCtx<'a> {
    map: &'a GridMap,
    config: &'a [Pos],
    targets: &'a [Pos],
    fields: &'a [Option<&'a DistField>],
    ties: &'a mut ChaCha8Rng,
    occupied: Vec<Option<AgentId>>,
    reserved: Vec<Option<AgentId>>,
    to: Vec<Option<Pos>>,
}

impl StepCtx<'_> {
    fn dist_of(&self, agent: AgentId, v: Pos) -> u32 {
        match self.fields[agent] {
            Some(field) => field.get(v),
            None => u32::from(v != self.config[agent]),
        }
    }

    /// Non-wait graph degree of a cell.
    fn degree(&self, v: Pos) -> usize {
        self.map.neighbors(v).len() - 1
    }

    /// Successors of agent `i`, best first: ascending distance to target,
    /// ties jittered, with up/right/down/left-then-wait as the last resort.
    fn candidates(&mut self, i: AgentId) -> Vec<Pos> {
        let from = self.config[i];
        let mut cands: Vec<(f64, u8, Pos)> = self
            .map
            .neighbors(from)
            .into_iter()
            .map(|u| {
                let d = self.dist_of(i, u);
                let jitter: f64 = self.ties.gen();
                let rank = if u == from {
                    4
                } else if u.row + 1 == from.row {
                    0
                } else if u.col == from.col + 1 {
                    1
                } else if u.row == from.row + 1 {
                    2
                } else {
                    3
                };
                (d as f64 + jitter, rank, u)
            })
            .collect();
        cands.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        cands.into_iter().map(|(_, _, u)| u).collect()
    }

    /// Priority inheritance with backtracking for one agent. On failure the
    /// agent settles on its own cell, taking over any tentative reservation
    /// its pusher holds there.
    fn pibt(&mut self, i: AgentId) -> bool {
        let from = self.config[i];
        let mut cands = self.candidates(i);
        let mut swap_agent = None;
        if cands[0] != from {
            swap_agent = self.swap_partner(i, cands[0]);
            if swap_agent.is_some() {
                cands.reverse();
            }
        }
        for (k, &u) in cands.iter().enumerate() {
            let idx = self.map.index(u);
            if self.reserved[idx].is_some() {
                continue;
            }
            if let Some(j) = self.occupied[idx] {
                // Swap conflict: j is already moving onto our cell.
                if j != i && self.to[j] == Some(from) {
                    continue;
                }
            }
            self.reserved[idx] = Some(i);
            self.to[i] = Some(u);
            if let Some(j) = self.occupied[idx] {
                if j != i && self.to[j].is_none() && !self.pibt(j) {
                    // The occupant failed and now owns this cell; back off.
                    self.to[i] = None;
                    continue;
                }
            }
            if k == 0 {
                if let Some(sa) = swap_agent {
                    let from_idx = self.map.index(from);
                    if self.to[sa].is_none()
                        && self.reserved[from_idx].is_none()
                        && self.map.move_legal(self.config[sa], from)
                    {
                        self.to[sa] = Some(from);
                        self.reserved[from_idx] = Some(sa);
                    }
                }
            }
            return true;
        }
        let idx = self.map.index(from);
        self.reserved[idx] = Some(i);
        self.to[i] = Some(from);
        false
    }

    /// An agent that must be swapped past `i` for either of them to make
    /// progress, or one that needs `i` to clear its cell. `best` is `i`'s
    /// preferred next cell.
    fn swap_partner(&self, i: AgentId, best: Pos) -> Option<AgentId> {
        let here = self.config[i];
        if let Some(j) = self.occupied[self.map.index(best)] {
            if self.to[j].is_none()
                && self.swap_required(i, j, here, self.config[j])
                && self.swap_possible(self.config[j], here)
            {
                return Some(j);
            }
        }
        for u in self.map.neighbors(here) {
            if u == here {
                continue;
            }
            let Some(k) = self.occupied[self.map.index(u)] else {
                continue;
            };
            if best == self.config[k] {
                continue;
            }
            if self.swap_required(k, i, here, best) && self.swap_possible(best, here) {
                return Some(k);
            }
        }
        None
    }

    /// Counts the puller's escape cells, following a width-1 corridor, and
    /// reports the single continuation if there is exactly one.
    fn escape_room(&self, v_puller: Pos, v_pusher: Pos) -> (usize, Option<Pos>) {
        let mut n = 0;
        let mut cont = None;
        for u in self.map.neighbors(v_puller) {
            if u == v_puller || u == v_pusher {
                continue;
            }
            if self.degree(u) == 1 {
                if let Some(a) = self.occupied[self.map.index(u)] {
                    if self.targets[a] == self.config[a] {
                        continue;
                    }
                }
            }
            n += 1;
            cont = Some(u);
        }
        (n, cont)
    }

    /// Walks the corridor ahead of the pusher/puller pair to decide whether a
    /// swap is the only way both can progress.
    fn swap_required(
        &self,
        pusher: AgentId,
        puller: AgentId,
        pusher_origin: Pos,
        puller_origin: Pos,
    ) -> bool {
        let mut v_pusher = pusher_origin;
        let mut v_puller = puller_origin;
        let mut guard = self.map.rows() * self.map.cols();
        while self.dist_of(pusher, v_puller) < self.dist_of(pusher, v_pusher) {
            guard -= 1;
            if guard == 0 {
                break;
            }
            let (n, cont) = self.escape_room(v_puller, v_pusher);
            if n >= 2 {
                return false;
            }
            let Some(next) = cont else { break };
            v_pusher = v_puller;
            v_puller = next;
        }
        self.dist_of(puller, v_pusher) < self.dist_of(puller, v_puller)
            && (self.dist_of(pusher, v_pusher) == 0
                || self.dist_of(pusher, v_puller) < self.dist_of(pusher, v_pusher))
    }

    /// Whether the puller can eventually be pulled to a cell with side room.
    fn swap_possible(&self, pusher_origin: Pos, puller_origin: Pos) -> bool {
        let mut v_pusher = pusher_origin;
        let mut v_puller = puller_origin;
        let mut guard = self.map.rows() * self.map.cols();
        while v_puller != pusher_origin {
            guard -= 1;
            if guard == 0 {
                break;
            }
            let (n, cont) = self.escape_room(v_puller, v_pusher);
            if n >= 2 {
                return true;
            }
            let Some(next) = cont else { return false };
            v_pusher = v_puller;
            v_puller = next;
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridmap::GridMap;
    use crate::maps;

    fn plan_until(
        map: &GridMap,
        planner: &mut Planner,
        config: &mut Vec<Pos>,
        targets: &[Pos],
        cap: usize,
    ) -> usize {
        for step_no in 1..=cap {
            let step = planner.plan_step(map, config, targets);
            validate_step(map, &step).unwrap();
            planner.update_priorities(&step.to, targets);
            *config = step.to;
            if config.iter().zip(targets).all(|(a, b)| a == b) {
                return step_no;
            }
        }
        panic!("targets not reached within {cap} steps");
    }

    #[test]
    fn single_agent_walks_shortest_path() {
        let map = GridMap::parse(maps::TOY).unwrap();
        let mut planner = Planner::new(1, 7);
        let mut config = vec![Pos::new(2, 2)];
        let targets = vec![Pos::new(2, 5)];
        let steps = plan_until(&map, &mut planner, &mut config, &targets, 10);
        assert_eq!(steps, 3);
    }

    #[test]
    fn all_agents_at_target_wait() {
        let map = GridMap::parse(maps::TOY).unwrap();
        let mut planner = Planner::new(2, 7);
        let config = vec![Pos::new(2, 2), Pos::new(2, 4)];
        let step = planner.plan_step(&map, &config, &config);
        assert_eq!(step.to, config);
    }

    #[test]
    fn corridor_head_on_resolves_via_pocket() {
        // 1-wide corridor of length 5 with one side pocket; the agents start
        // at opposite ends and swap. Every step must validate and both must
        // arrive within 4x the corridor length.
        let text = "@@@@@@@@\n@.....S@\n@@@.@@@@\n@@@U@@@@\n@@@@@@@@\n";
        let map = GridMap::parse(text).unwrap();
        let mut planner = Planner::new(2, 7);
        let mut config = vec![Pos::new(1, 1), Pos::new(1, 5)];
        let targets = vec![Pos::new(1, 5), Pos::new(1, 1)];
        let steps = plan_until(&map, &mut planner, &mut config, &targets, 4 * 5);
        assert!(steps <= 20, "took {steps} steps");
    }

    #[test]
    fn dead_end_corridor_steps_stay_legal() {
        // Pure corridor, the only side room is the shelf dead end. Progress
        // is not guaranteed here; every emitted step must still be legal.
        let text = "@@@@@@@\n@U...S@\n@@@@@@@\n";
        let map = GridMap::parse(text).unwrap();
        let mut planner = Planner::new(2, 7);
        let mut config = vec![Pos::new(1, 1), Pos::new(1, 4)];
        let targets = vec![Pos::new(1, 4), Pos::new(1, 1)];
        for _ in 0..30 {
            let step = planner.plan_step(&map, &config, &targets);
            validate_step(&map, &step).unwrap();
            planner.update_priorities(&step.to, &targets);
            config = step.to;
        }
    }

    #[test]
    fn planner_is_deterministic() {
        let map = GridMap::parse(&maps::warehouse_single()).unwrap();
        let starts = [
            Pos::new(1, 1),
            Pos::new(1, 2),
            Pos::new(4, 10),
            Pos::new(13, 3),
        ];
        let targets = [
            Pos::new(13, 1),
            Pos::new(25, 100),
            Pos::new(1, 1),
            Pos::new(4, 10),
        ];
        let run = || {
            let mut planner = Planner::new(4, 7);
            let mut config = starts.to_vec();
            let mut log = Vec::new();
            for _ in 0..60 {
                let step = planner.plan_step(&map, &config, &targets);
                validate_step(&map, &step).unwrap();
                planner.update_priorities(&config, &targets);
                config = step.to;
                log.push(config.clone());
            }
            log
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn validator_flags_swap_vertex_and_illegal_moves() {
        let map = GridMap::parse(maps::TOY).unwrap();
        let a = Pos::new(2, 2);
        let b = Pos::new(2, 3);
        let swap = JointStep { from: vec![a, b], to: vec![b, a] };
        assert_eq!(validate_step(&map, &swap), Err(Conflict::Swap { agents: (0, 1) }));

        let vertex = JointStep { from: vec![a, Pos::new(2, 4)], to: vec![b, b] };
        assert_eq!(
            validate_step(&map, &vertex),
            Err(Conflict::Vertex { agents: (0, 1), at: b })
        );

        let jump = JointStep { from: vec![a], to: vec![Pos::new(2, 4)] };
        assert!(matches!(
            validate_step(&map, &jump),
            Err(Conflict::IllegalMove { agent: 0, .. })
        ));

        // Shelf-to-shelf is illegal even though the cells are adjacent.
        let s2s = JointStep { from: vec![Pos::new(1, 1)], to: vec![Pos::new(2, 1)] };
        assert!(matches!(
            validate_step(&map, &s2s),
            Err(Conflict::IllegalMove { .. })
        ));
    }

    #[test]
    fn priorities_bump_and_reset() {
        let mut prio = PriorityState::new(2);
        let base0 = prio.values()[0];
        let config = [Pos::new(1, 1), Pos::new(1, 2)];
        let targets = [Pos::new(1, 5), Pos::new(1, 2)];
        prio.update(&config, &targets);
        prio.update(&config, &targets);
        assert_eq!(prio.steps_off_target(0), 2);
        assert_eq!(prio.values()[0], base0 + 2.0);
        assert_eq!(prio.steps_off_target(1), 0);

        // Arrival resets.
        let arrived = [Pos::new(1, 5), Pos::new(1, 2)];
        prio.update(&arrived, &targets);
        assert_eq!(prio.values()[0], base0);
    }

    #[test]
    fn equal_wait_ordering_decided_by_id_fraction() {
        let mut prio = PriorityState::new(4);
        let config = [Pos::new(1, 1); 4];
        let targets = [Pos::new(1, 5); 4];
        prio.update(&config, &targets);
        let v = prio.values();
        // All off-target equally long: higher id ranks higher, stably.
        assert!(v[3] > v[2] && v[2] > v[1] && v[1] > v[0]);
    }

    #[test]
    fn fuzzed_steps_always_validate() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;

        let map = GridMap::parse(maps::TOY).unwrap();
        let open: Vec<Pos> = (0..map.rows())
            .flat_map(|r| (0..map.cols()).map(move |c| Pos::new(r, c)))
            .filter(|&p| map.is_traversable(p))
            .collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(404);
        for _ in 0..2000 {
            let mut cells = open.clone();
            cells.shuffle(&mut rng);
            let n = 4;
            let config: Vec<Pos> = cells[..n].to_vec();
            let targets: Vec<Pos> = (0..n)
                .map(|i| cells[(i * 3 + 1) % cells.len()])
                .collect();
            let mut planner = Planner::new(n, 7);
            let step = planner.plan_step(&map, &config, &targets);
            validate_step(&map, &step).unwrap();
        }
    }
}

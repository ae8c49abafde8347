//! Run outputs: the path log and its re-validator, the metrics JSON report,
//! and the CSV emitters for heatmaps, per-task logs, events and queues.
//!
//! Path log format: one line per timestep (line 0 = start configuration),
//! each line the comma-separated `row:col` positions of all agents in id
//! order.

use serde::Serialize;
use thiserror::Error;

use crate::assigner::EventRecord;
use crate::cachestore::Policy;
use crate::gridmap::{GridMap, Group, GroupMode, Pos};
use crate::sim::{RunMetrics, SimConfig};
use crate::solver::{validate_config, validate_step, Conflict, JointStep};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("path log line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("path log is empty")]
    Empty,
}

pub fn path_log_to_string(paths: &[Vec<Pos>]) -> String {
    let mut out = String::new();
    for config in paths {
        let line: Vec<String> = config.iter().map(|p| format!("{}:{}", p.row, p.col)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_path_log(text: &str) -> Result<Vec<Vec<Pos>>, LogError> {
    let mut paths: Vec<Vec<Pos>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut config = Vec::new();
        for token in line.split(',') {
            let (r, c) = token.split_once(':').ok_or_else(|| LogError::Parse {
                line: lineno + 1,
                detail: format!("bad position token `{token}`"),
            })?;
            let row: usize = r.trim().parse().map_err(|_| LogError::Parse {
                line: lineno + 1,
                detail: format!("bad row `{r}`"),
            })?;
            let col: usize = c.trim().parse().map_err(|_| LogError::Parse {
                line: lineno + 1,
                detail: format!("bad col `{c}`"),
            })?;
            config.push(Pos::new(row, col));
        }
        if let Some(first) = paths.first() {
            if config.len() != first.len() {
                return Err(LogError::Parse {
                    line: lineno + 1,
                    detail: format!(
                        "agent count changed from {} to {} (truncated log?)",
                        first.len(),
                        config.len()
                    ),
                });
            }
        }
        paths.push(config);
    }
    if paths.is_empty() {
        return Err(LogError::Empty);
    }
    Ok(paths)
}

/// Re-validates a whole path log: the start configuration must be sane and
/// every consecutive pair of lines must form a conflict-free joint step.
pub fn verify_path_log(map: &GridMap, paths: &[Vec<Pos>]) -> Result<(), (usize, Conflict)> {
    validate_config(map, &paths[0]).map_err(|c| (0, c))?;
    for (t, pair) in paths.windows(2).enumerate() {
        let step = JointStep { from: pair[0].clone(), to: pair[1].clone() };
        validate_step(map, &step).map_err(|c| (t + 1, c))?;
    }
    Ok(())
}

/// Configuration echo embedded in every metrics report.
#[derive(Clone, Debug, Serialize)]
pub struct ConfigEcho {
    pub map: String,
    pub rows: usize,
    pub cols: usize,
    pub agents: usize,
    pub caches: usize,
    pub groups: String,
    pub policy: Policy,
    pub dist: DistEcho,
    pub queue_len: usize,
    pub queue_per_group: Option<usize>,
    pub seed: u64,
    pub step_cap: u64,
    pub time_budget_ms: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DistEcho {
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mk_m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mk_k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

impl ConfigEcho {
    /// `map_label` is the map as the caller names it (a path, usually);
    /// `dist_file` likewise for file-fed distributions.
    pub fn new(config: &SimConfig, map_label: &str, dist_file: Option<&str>) -> Self {
        let dist = match &config.dist {
            crate::sim::DistSpec::Mk { window, kinds } => DistEcho {
                kind: "mk",
                mk_m: Some(*window),
                mk_k: Some(*kinds),
                file: None,
            },
            crate::sim::DistSpec::Zhang => {
                DistEcho { kind: "zhang", mk_m: None, mk_k: None, file: None }
            }
            crate::sim::DistSpec::Empirical(_) => DistEcho {
                kind: "file",
                mk_m: None,
                mk_k: None,
                file: dist_file.map(str::to_string),
            },
        };
        let groups = match config.mode {
            GroupMode::SinglePort => "single",
            GroupMode::MultiPort => "multi",
        };
        let total_queue = config
            .queue_per_group
            .map(|per| per * config.map.ports().len())
            .unwrap_or(config.queue_len);
        ConfigEcho {
            map: map_label.to_string(),
            rows: config.map.rows(),
            cols: config.map.cols(),
            agents: config.agents,
            caches: config.cache_count.unwrap_or_else(|| config.map.caches().len()),
            groups: groups.to_string(),
            policy: config.policy,
            dist,
            queue_len: config.queue_len,
            queue_per_group: config.queue_per_group,
            seed: config.seed,
            step_cap: config.resolved_step_cap(total_queue),
            time_budget_ms: config.time_budget.map(|d| d.as_millis() as u64).unwrap_or(0),
        }
    }
}

/// The stable metrics schema; bump `schema` when fields change.
#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    pub schema: u32,
    pub config: ConfigEcho,
    pub makespan: u64,
    pub deliveries: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub hit_rate: f64,
    pub status1_entries: u64,
    pub status2_entries: u64,
    pub total_waits: u64,
}

impl MetricsReport {
    pub fn new(echo: ConfigEcho, metrics: &RunMetrics) -> Self {
        MetricsReport {
            schema: 1,
            config: echo,
            makespan: metrics.makespan,
            deliveries: metrics.deliveries,
            cache_hits: metrics.cache_hits,
            cache_misses: metrics.cache_misses,
            hit_rate: metrics.hit_rate,
            status1_entries: metrics.status1_entries,
            status2_entries: metrics.status2_entries,
            total_waits: metrics.total_waits,
        }
    }

    /// Single-line JSON, suitable for both standalone files and JSON-lines.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

/// `rows x cols` comma-separated wait frequencies.
pub fn heatmap_csv(metrics: &RunMetrics) -> String {
    let heat = metrics.heatmap();
    let mut out = String::new();
    for r in 0..metrics.rows {
        let line: Vec<String> = (0..metrics.cols)
            .map(|c| format!("{}", heat[r * metrics.cols + c]))
            .collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn per_task_csv(metrics: &RunMetrics) -> String {
    let mut out = String::from("group,seq,item,assigned_at,delivered_at,fulfillment\n");
    for t in &metrics.per_task {
        let fulfillment = serde_json::to_value(t.fulfillment).unwrap();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            t.group,
            t.seq,
            t.item,
            t.assigned_at,
            t.delivered_at,
            fulfillment.as_str().unwrap()
        ));
    }
    out
}

pub fn events_csv(events: &[EventRecord]) -> String {
    let mut out = String::from("timestep,agent,old_status,new_status,target\n");
    for e in events {
        out.push_str(&format!(
            "{},{},{},{},{}:{}\n",
            e.at, e.agent, e.old_status, e.new_status, e.target.row, e.target.col
        ));
    }
    out
}

/// Export of generated queues for replay: `seq,item,group`.
pub fn queues_csv(groups: &[Group]) -> String {
    let mut out = String::from("seq,item,group\n");
    for g in groups {
        for task in &g.queue {
            out.push_str(&format!("{},{},{}\n", task.seq, task.item, g.id));
        }
    }
    out
}

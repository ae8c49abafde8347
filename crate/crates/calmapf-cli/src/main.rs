//! Single-binary entry point: run one simulation, sweep a parameter grid, or
//! re-validate a path log. Everything the CLI does goes through the library
//! API, so a run here and a run through `calmapf::sim::run` agree byte for
//! byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use calmapf::assigner::AssignError;
use calmapf::cachestore::Policy;
use calmapf::gridmap::{GridMap, GroupMode};
use calmapf::logs::{
    self, events_csv, heatmap_csv, parse_path_log, path_log_to_string, per_task_csv, ConfigEcho,
    MetricsReport,
};
use calmapf::sim::{run, DistSpec, SimConfig, SimError};
use calmapf::taskgen::load_frequency_csv;

#[derive(Parser)]
#[command(name = "calmapf", version, about = "Cache-augmented lifelong MAPF simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and print its metrics JSON.
    Run(RunArgs),
    /// Run a cross product of configurations, appending JSON lines.
    Sweep(SweepArgs),
    /// Re-validate a path log against a map.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum DistKind {
    Mk,
    Zhang,
    File,
}

impl FromStr for DistKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mk" => Ok(DistKind::Mk),
            "zhang" => Ok(DistKind::Zhang),
            "file" => Ok(DistKind::File),
            other => Err(format!("unknown distribution `{other}` (expected mk|zhang|file)")),
        }
    }
}

impl std::fmt::Display for DistKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DistKind::Mk => write!(f, "mk"),
            DistKind::Zhang => write!(f, "zhang"),
            DistKind::File => write!(f, "file"),
        }
    }
}

#[derive(Args, Clone)]
struct CommonRunArgs {
    /// Map file (`@`, `.`, `S`, `C`, `U`; leading `#` lines ignored).
    #[arg(long)]
    map: PathBuf,
    /// Grouping mode.
    #[arg(long, default_value = "multi")]
    groups: GroupMode,
    /// M-K window length.
    #[arg(long = "mk-m", default_value_t = 200)]
    mk_m: usize,
    /// M-K distinct kinds per window.
    #[arg(long = "mk-k", default_value_t = 20)]
    mk_k: usize,
    /// Frequency CSV (`item,count`) for `--dist file`.
    #[arg(long = "dist-file")]
    dist_file: Option<PathBuf>,
    /// Total queue length, split evenly across groups.
    #[arg(long = "queue-len", default_value_t = 1000)]
    queue_len: usize,
    /// Per-group queue length, overriding the even split.
    #[arg(long = "queue-len-per-group")]
    queue_len_per_group: Option<usize>,
    /// Abort after this many steps (default: 100*(rows+cols)*queue length).
    #[arg(long = "step-cap")]
    step_cap: Option<u64>,
    /// Wall-clock budget in milliseconds; 0 disables it.
    #[arg(long = "time-budget-ms", default_value_t = 0)]
    time_budget_ms: u64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonRunArgs,
    #[arg(long)]
    agents: usize,
    /// Active cache count (whole columns per group); default all caches.
    #[arg(long)]
    caches: Option<usize>,
    #[arg(long, default_value = "lru")]
    policy: Policy,
    #[arg(long, default_value = "mk")]
    dist: DistKind,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory for metrics.json and optional logs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the wait-frequency grid as heatmap.csv.
    #[arg(long)]
    heatmap: bool,
    /// Write the per-timestep position log as paths.csv.
    #[arg(long = "log-paths")]
    log_paths: bool,
    /// Write the per-task completion log as tasks.csv.
    #[arg(long = "log-tasks")]
    log_tasks: bool,
    /// Write the status-transition log as events.csv.
    #[arg(long = "log-events")]
    log_events: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonRunArgs,
    /// Agent counts to sweep.
    #[arg(long, value_delimiter = ',', required = true)]
    agents: Vec<usize>,
    /// Cache counts to sweep; empty keeps all map caches.
    #[arg(long, value_delimiter = ',')]
    caches: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "lru")]
    policies: Vec<Policy>,
    #[arg(long, value_delimiter = ',', default_value = "mk")]
    dists: Vec<DistKind>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    seeds: Vec<u64>,
    /// Output directory; results append to sweep.jsonl as runs finish.
    #[arg(long)]
    out: PathBuf,
    /// Also write one heatmap CSV per run.
    #[arg(long)]
    heatmap: bool,
    /// Parallel runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    map: PathBuf,
    /// Path log produced by `run --log-paths`.
    #[arg(long)]
    paths: PathBuf,
}

/// Usage-class failures exit 2, runtime failures exit 1.
enum CliError {
    Usage(anyhow::Error),
    Run(anyhow::Error),
}

impl CliError {
    fn from_sim(err: SimError) -> Self {
        match err {
            SimError::Map(_)
            | SimError::TaskGen(_)
            | SimError::Config(_)
            | SimError::Assign(AssignError::EmptyQueue { .. }) => {
                CliError::Usage(anyhow::Error::new(err))
            }
            _ => CliError::Run(anyhow::Error::new(err)),
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("CALMAPF_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Verify(args) => cmd_verify(args),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Usage(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
        Err(CliError::Run(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn load_map(path: &Path) -> Result<GridMap, CliError> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading map {}", path.display()))
        .map_err(CliError::Usage)?;
    GridMap::parse(&text).map_err(|e| CliError::Usage(anyhow::Error::new(e)))
}

fn build_config(
    map: GridMap,
    common: &CommonRunArgs,
    agents: usize,
    caches: Option<usize>,
    policy: Policy,
    dist: DistKind,
    seed: u64,
) -> Result<SimConfig, CliError> {
    let universe = map.item_count();
    let dist = match dist {
        DistKind::Mk => DistSpec::Mk { window: common.mk_m, kinds: common.mk_k },
        DistKind::Zhang => DistSpec::Zhang,
        DistKind::File => {
            let path = common
                .dist_file
                .as_ref()
                .ok_or_else(|| CliError::Usage(anyhow!("--dist file needs --dist-file")))?;
            let table = load_frequency_csv(path, universe)
                .map_err(|e| CliError::Usage(anyhow::Error::new(e)))?;
            DistSpec::Empirical(table)
        }
    };
    let mut cfg = SimConfig::new(map, agents, common.groups, policy, dist);
    cfg.cache_count = caches;
    cfg.queue_len = common.queue_len;
    cfg.queue_per_group = common.queue_len_per_group;
    cfg.seed = seed;
    cfg.step_cap = common.step_cap;
    cfg.time_budget = (common.time_budget_ms > 0)
        .then(|| Duration::from_millis(common.time_budget_ms));
    Ok(cfg)
}

fn echo_for(cfg: &SimConfig, common: &CommonRunArgs) -> ConfigEcho {
    ConfigEcho::new(
        cfg,
        &common.map.display().to_string(),
        common.dist_file.as_ref().map(|p| p.display().to_string()).as_deref(),
    )
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, CliError> {
    let map = load_map(&args.common.map)?;
    let mut cfg = build_config(
        map,
        &args.common,
        args.agents,
        args.caches,
        args.policy,
        args.dist,
        args.seed,
    )?;
    cfg.log_paths = args.log_paths;
    cfg.log_events = args.log_events;

    let metrics = run(&cfg).map_err(CliError::from_sim)?;
    let report = MetricsReport::new(echo_for(&cfg, &args.common), &metrics);
    println!("{}", report.to_json());

    if let Some(out) = &args.out {
        let write = |name: &str, data: String| -> Result<(), CliError> {
            fs::write(out.join(name), data)
                .with_context(|| format!("writing {name}"))
                .map_err(CliError::Run)
        };
        fs::create_dir_all(out).context("creating output dir").map_err(CliError::Run)?;
        write("metrics.json", format!("{}\n", report.to_json()))?;
        if args.heatmap {
            write("heatmap.csv", heatmap_csv(&metrics))?;
        }
        if args.log_paths {
            let paths = metrics.paths.as_ref().expect("path log requested");
            write("paths.csv", path_log_to_string(paths))?;
        }
        if args.log_tasks {
            write("tasks.csv", per_task_csv(&metrics))?;
        }
        if args.log_events {
            let events = metrics.events.as_deref().unwrap_or(&[]);
            write("events.csv", events_csv(events))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode, CliError> {
    let map = load_map(&args.common.map)?;
    if args.agents.is_empty() || args.policies.is_empty() || args.dists.is_empty()
        || args.seeds.is_empty()
    {
        return Err(CliError::Usage(anyhow!("sweep lists must be nonempty")));
    }
    let cache_choices: Vec<Option<usize>> = if args.caches.is_empty() {
        vec![None]
    } else {
        args.caches.iter().map(|&c| Some(c)).collect()
    };

    let mut combos = Vec::new();
    for &agents in &args.agents {
        for &caches in &cache_choices {
            for &policy in &args.policies {
                for &dist in &args.dists {
                    for &seed in &args.seeds {
                        combos.push((agents, caches, policy, dist, seed));
                    }
                }
            }
        }
    }
    tracing::info!(runs = combos.len(), jobs = args.jobs, "starting sweep");

    fs::create_dir_all(&args.out).context("creating output dir").map_err(CliError::Run)?;
    let jsonl = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(args.out.join("sweep.jsonl"))
        .context("opening sweep.jsonl")
        .map_err(CliError::Run)?;
    let jsonl = Mutex::new(jsonl);
    let first_error: Mutex<Option<CliError>> = Mutex::new(None);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .context("building thread pool")
        .map_err(CliError::Run)?;
    pool.install(|| {
        combos.par_iter().for_each(|&(agents, caches, policy, dist, seed)| {
            if first_error.lock().unwrap().is_some() {
                return;
            }
            let outcome = (|| -> Result<(), CliError> {
                let cfg = build_config(map.clone(), &args.common, agents, caches, policy, dist, seed)?;
                let metrics = run(&cfg).map_err(CliError::from_sim)?;
                let report = MetricsReport::new(echo_for(&cfg, &args.common), &metrics);
                {
                    let mut file = jsonl.lock().unwrap();
                    writeln!(file, "{}", report.to_json())
                        .context("appending sweep.jsonl")
                        .map_err(CliError::Run)?;
                }
                if args.heatmap {
                    let caches_label = caches.map_or("all".to_string(), |c| c.to_string());
                    let name = format!(
                        "heatmap_a{agents}_c{caches_label}_{policy}_{dist}_s{seed}.csv"
                    );
                    fs::write(args.out.join(&name), heatmap_csv(&metrics))
                        .with_context(|| format!("writing {name}"))
                        .map_err(CliError::Run)?;
                }
                tracing::info!(agents, policy = %policy, dist = %dist, seed, "run complete");
                Ok(())
            })();
            if let Err(err) = outcome {
                first_error.lock().unwrap().get_or_insert(err);
            }
        });
    });

    match first_error.into_inner().unwrap() {
        Some(err) => Err(err),
        None => Ok(ExitCode::SUCCESS),
    }
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode, CliError> {
    let map = load_map(&args.map)?;
    let text = fs::read_to_string(&args.paths)
        .with_context(|| format!("reading path log {}", args.paths.display()))
        .map_err(CliError::Usage)?;
    let paths = parse_path_log(&text).map_err(|e| CliError::Usage(anyhow::Error::new(e)))?;
    match logs::verify_path_log(&map, &paths) {
        Ok(()) => {
            println!(
                "ok: {} agents over {} timesteps, collision-free",
                paths[0].len(),
                paths.len() - 1
            );
            Ok(ExitCode::SUCCESS)
        }
        Err((t, conflict)) => {
            eprintln!("conflict at timestep {t}: {conflict}");
            Ok(ExitCode::FAILURE)
        }
    }
}

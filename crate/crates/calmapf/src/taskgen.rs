//! Seeded task-queue generators and frequency-table ingestion.
//!
//! Three sources: the windowed M-K stream (every window of `window`
//! consecutive tasks shows at most `kinds` distinct items), the 7:2:1 kind
//! split, and empirical sampling from an external frequency CSV. All
//! generators are pure functions of their parameters and the generator
//! handed in, so the same seed reproduces the same queue.

use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::gridmap::Pos;
use crate::ItemId;

/// One queue entry: deliver one unit of `item` to `destination`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Task {
    pub item: ItemId,
    pub destination: Pos,
    pub seq: usize,
}

#[derive(Debug, Error)]
pub enum TaskGenError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("malformed frequency csv: {0}")]
    MalformedCsv(String),
    #[error("frequency table is empty")]
    EmptyTable,
}

/// A normalized item-probability table, ranked by descending frequency.
#[derive(Clone, Debug)]
pub struct FrequencyTable {
    /// `(item index, probability)`, item index == frequency rank.
    entries: Vec<(ItemId, f64)>,
    /// Original identifier per rank, for inspection.
    names: Vec<String>,
}

impl FrequencyTable {
    /// Reads a `item,count` CSV and ranks items by descending count (stable
    /// on ties). Probabilities are counts normalized by their total.
    pub fn from_csv(reader: impl Read) -> Result<Self, TaskGenError> {
        let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        {
            let headers = csv
                .headers()
                .map_err(|e| TaskGenError::MalformedCsv(e.to_string()))?;
            if headers.len() < 2
                || !headers[0].trim().eq_ignore_ascii_case("item")
                || !headers[1].trim().eq_ignore_ascii_case("count")
            {
                return Err(TaskGenError::MalformedCsv(format!(
                    "expected header `item,count`, found `{}`",
                    headers.iter().collect::<Vec<_>>().join(",")
                )));
            }
        }
        let mut rows: Vec<(String, f64)> = Vec::new();
        for record in csv.records() {
            let record = record.map_err(|e| TaskGenError::MalformedCsv(e.to_string()))?;
            if record.len() < 2 {
                return Err(TaskGenError::MalformedCsv(format!(
                    "row {} has {} fields",
                    rows.len() + 1,
                    record.len()
                )));
            }
            let name = record[0].trim().to_string();
            let count: f64 = record[1]
                .trim()
                .parse()
                .map_err(|_| TaskGenError::MalformedCsv(format!("bad count `{}`", &record[1])))?;
            if !count.is_finite() || count < 0.0 {
                return Err(TaskGenError::MalformedCsv(format!(
                    "negative or non-finite count for `{name}`"
                )));
            }
            rows.push((name, count));
        }
        let total: f64 = rows.iter().map(|(_, c)| c).sum();
        if rows.is_empty() || total <= 0.0 {
            return Err(TaskGenError::EmptyTable);
        }
        rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let names = rows.iter().map(|(n, _)| n.clone()).collect();
        let entries = rows
            .iter()
            .enumerate()
            .map(|(rank, (_, c))| (rank, c / total))
            .collect();
        Ok(FrequencyTable { entries, names })
    }

    /// Restricts the table to `universe` item kinds: extra low-frequency
    /// entries are dropped and the rest renormalized. Tables smaller than the
    /// universe stay as they are (missing kinds simply have zero mass).
    pub fn fit_to_universe(mut self, universe: usize) -> Result<Self, TaskGenError> {
        if universe == 0 {
            return Err(TaskGenError::InvalidParams("universe must be positive".into()));
        }
        if self.entries.len() > universe {
            self.entries.truncate(universe);
            self.names.truncate(universe);
            let total: f64 = self.entries.iter().map(|(_, p)| p).sum();
            if total <= 0.0 {
                return Err(TaskGenError::EmptyTable);
            }
            for (_, p) in self.entries.iter_mut() {
                *p /= total;
            }
        }
        Ok(self)
    }

    pub fn entries(&self) -> &[(ItemId, f64)] {
        &self.entries
    }

    /// Original identifier of the item ranked `rank`.
    pub fn name_of_rank(&self, rank: usize) -> Option<&str> {
        self.names.get(rank).map(|s| s.as_str())
    }

    pub fn is_normalized(&self) -> bool {
        let sum: f64 = self.entries.iter().map(|(_, p)| p).sum();
        (sum - 1.0).abs() <= 1e-9
    }

    fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = self
            .entries
            .iter()
            .map(|(_, p)| {
                acc += p;
                acc
            })
            .collect();
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        cdf
    }
}

impl fmt::Display for FrequencyTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FrequencyTable({} items)", self.entries.len())
    }
}

/// Loads and fits a frequency CSV in one step.
pub fn load_frequency_csv(path: &Path, universe: usize) -> Result<FrequencyTable, TaskGenError> {
    let file = File::open(path)
        .map_err(|e| TaskGenError::MalformedCsv(format!("{}: {e}", path.display())))?;
    FrequencyTable::from_csv(file)?.fit_to_universe(universe)
}

/// Generates a task stream in which every window of `window` consecutive
/// entries contains at most `kinds` distinct items.
///
/// A rotating active set of `kinds` items feeds the stream; each step samples
/// uniformly from the set, and with probability `1/window` the stalest member
/// is swapped for a fresh item, but only once its last occurrence has aged
/// out of every window that could also see the replacement.
pub fn gen_mk(
    window: usize,
    kinds: usize,
    len: usize,
    universe: usize,
    rng: &mut impl Rng,
) -> Result<Vec<ItemId>, TaskGenError> {
    if kinds == 0 || kinds > universe || kinds > window {
        return Err(TaskGenError::InvalidParams(format!(
            "need 1 <= kinds <= min(window, universe); got kinds={kinds}, window={window}, universe={universe}"
        )));
    }
    if len == 0 {
        return Err(TaskGenError::InvalidParams("queue length must be >= 1".into()));
    }

    // (item, last occurrence); None = never sampled yet.
    let mut active: Vec<(ItemId, Option<usize>)> = rand::seq::index::sample(rng, universe, kinds)
        .into_iter()
        .map(|item| (item, None))
        .collect();

    let mut out = Vec::with_capacity(len);
    for step in 0..len {
        let pick = rng.gen_range(0..active.len());
        out.push(active[pick].0);
        active[pick].1 = Some(step);

        if rng.gen_bool(1.0 / window as f64) && active.len() < universe {
            let (slot, stale) = active
                .iter()
                .enumerate()
                .map(|(i, &(_, occ))| (i, occ))
                .min_by_key(|&(i, occ)| (occ.map_or(-1i64, |t| t as i64), i as i64))
                .unwrap();
            let aged_out = match stale {
                None => true,
                Some(t) => step - t >= window,
            };
            if aged_out {
                let fresh = loop {
                    let candidate = rng.gen_range(0..universe);
                    if !active.iter().any(|&(item, _)| item == candidate) {
                        break candidate;
                    }
                };
                active[slot] = (fresh, None);
            }
        }
    }
    Ok(out)
}

/// Splits the item universe 70%/20%/10% by kind and gives those categories
/// 10%/20%/70% of the total probability mass, uniform within a category.
pub fn gen_zhang(len: usize, universe: usize, rng: &mut impl Rng) -> Result<Vec<ItemId>, TaskGenError> {
    let weights = zhang_weights(universe, rng)?;
    let table = FrequencyTable {
        entries: weights,
        names: Vec::new(),
    };
    Ok(gen_empirical(&table, len, rng))
}

/// Category weights for the 7:2:1 split over a freshly shuffled universe.
fn zhang_weights(universe: usize, rng: &mut impl Rng) -> Result<Vec<(ItemId, f64)>, TaskGenError> {
    if universe < 10 {
        return Err(TaskGenError::InvalidParams(format!(
            "zhang distribution needs a universe of at least 10 kinds, got {universe}"
        )));
    }
    use rand::seq::SliceRandom;
    let mut kinds: Vec<ItemId> = (0..universe).collect();
    kinds.shuffle(rng);
    let n_rare = universe * 70 / 100;
    let n_mid = universe * 20 / 100;
    let n_hot = universe - n_rare - n_mid;
    let mut weights = Vec::with_capacity(universe);
    for (i, &item) in kinds.iter().enumerate() {
        let p = if i < n_rare {
            0.10 / n_rare as f64
        } else if i < n_rare + n_mid {
            0.20 / n_mid as f64
        } else {
            0.70 / n_hot as f64
        };
        weights.push((item, p));
    }
    Ok(weights)
}

/// Draws `len` i.i.d. items from the table by inverse-CDF sampling.
pub fn gen_empirical(table: &FrequencyTable, len: usize, rng: &mut impl Rng) -> Vec<ItemId> {
    let cdf = table.cdf();
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let u: f64 = rng.gen();
        let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        out.push(table.entries[idx].0);
    }
    out
}

/// Largest number of distinct kinds seen in any window of `window`
/// consecutive entries. Brute force, used as the oracle for `gen_mk`.
pub fn max_window_kinds(stream: &[ItemId], window: usize) -> usize {
    if stream.is_empty() {
        return 0;
    }
    let mut worst = 0;
    let mut i = 0;
    while i < stream.len() {
        let end = (i + window).min(stream.len());
        let mut kinds: Vec<ItemId> = stream[i..end].to_vec();
        kinds.sort_unstable();
        kinds.dedup();
        worst = worst.max(kinds.len());
        if end == stream.len() {
            break;
        }
        i += 1;
    }
    worst
}

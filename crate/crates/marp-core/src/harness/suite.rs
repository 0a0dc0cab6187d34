//! Suite execution: many seeded episodes per planner, a worker pool
//! over the episode queue, and deterministic aggregation into CSV rows.

use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;
use thiserror::Error;

use crate::harness::episode::{
    mean_std, penalized_length, run_episode, run_selfplay, selfplay_penalized, OpponentClass,
};
use crate::harness::families::{family, Family};
use crate::planners::PlannerSpec;
use crate::rng::{rng_for, Stream};

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("suite config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown scenario family `{0}`")]
    UnknownFamily(String),
    #[error("suite config is missing `{0}`")]
    Missing(&'static str),
}

/// A benchmark request: one family, one opponent class, a planner
/// lineup, and how many seeded episodes each planner runs.
#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub family: String,
    pub class: OpponentClass,
    pub planners: Vec<PlannerSpec>,
    pub runs: usize,
    pub base_seed: u64,
    pub workers: Option<usize>,
}

impl SuiteConfig {
    /// Parses the line-oriented config format:
    ///
    /// ```text
    /// family small2a
    /// class rational
    /// runs 200
    /// seed 17
    /// workers 4
    /// planner astar
    /// planner uts:n=2,m=0,eval=cbs
    /// ```
    pub fn parse(text: &str) -> Result<SuiteConfig, SuiteError> {
        let mut family_name = None;
        let mut class = None;
        let mut planners = Vec::new();
        let mut runs = None;
        let mut base_seed = 0;
        let mut workers = None;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| SuiteError::Parse { line: lineno + 1, msg };
            let (key, value) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| bad(format!("expected `key value`, got `{line}`")))?;
            let value = value.trim();
            match key {
                "family" => family_name = Some(value.to_string()),
                "class" => {
                    class = Some(
                        OpponentClass::parse(value)
                            .ok_or_else(|| bad(format!("unknown class `{value}`")))?,
                    )
                }
                "planner" => planners.push(
                    PlannerSpec::parse(value).map_err(|e| bad(e.to_string()))?,
                ),
                "runs" => {
                    let n: usize =
                        value.parse().map_err(|_| bad(format!("bad run count `{value}`")))?;
                    if n == 0 {
                        return Err(bad("runs must be at least 1".into()));
                    }
                    runs = Some(n);
                }
                "seed" => {
                    base_seed =
                        value.parse().map_err(|_| bad(format!("bad seed `{value}`")))?
                }
                "workers" => {
                    workers = Some(
                        value.parse().map_err(|_| bad(format!("bad worker count `{value}`")))?,
                    )
                }
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }

        let family = family_name.ok_or(SuiteError::Missing("family"))?;
        if crate::harness::families::family(&family).is_none() {
            return Err(SuiteError::UnknownFamily(family));
        }
        if planners.is_empty() {
            return Err(SuiteError::Missing("planner"));
        }
        Ok(SuiteConfig {
            family,
            class: class.ok_or(SuiteError::Missing("class"))?,
            planners,
            runs: runs.ok_or(SuiteError::Missing("runs"))?,
            base_seed,
            workers,
        })
    }

    pub fn family(&self) -> &'static Family {
        family(&self.family).expect("validated at parse time")
    }
}

/// Worker count: the `MARP_WORKERS` environment variable wins, then the
/// config, then the machine's parallelism.
pub fn resolve_workers(requested: Option<usize>) -> usize {
    if let Ok(text) = std::env::var("MARP_WORKERS") {
        if let Ok(n) = text.trim().parse::<usize>() {
            if n >= 1 {
                return n;
            }
        }
    }
    requested.filter(|&n| n >= 1).unwrap_or_else(|| {
        std::thread::available_parallelism().map(NonZeroUsize::get).unwrap_or(1)
    })
}

/// Flattened outcome of one episode, ready for aggregation. Self-play
/// episodes report per-agent means; scripted ones the modelling agent.
#[derive(Debug, Clone)]
pub struct EpisodeStats {
    pub penalized: f64,
    pub raw: f64,
    /// Fraction of tracked agents that collided (0 or 1 when scripted).
    pub collision: f64,
    pub plan_calls: usize,
    pub planning_ms: f64,
    pub fallbacks: u32,
    pub failed: bool,
}

/// Per-episode stats for one planner, ordered by episode index.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub stats: Vec<EpisodeStats>,
    pub failures: usize,
}

impl BatchResult {
    pub fn penalized_values(&self) -> Vec<f64> {
        self.stats.iter().map(|s| s.penalized).collect()
    }
}

/// Runs `runs` episodes of one planner, episode `i` seeded with
/// `base_seed + i`. Generation or construction failures score the
/// episode at the cap and are counted, never raised.
pub fn run_batch(
    fam: &Family,
    class: OpponentClass,
    spec: &PlannerSpec,
    runs: usize,
    base_seed: u64,
    workers: usize,
) -> BatchResult {
    let tunables = fam.tunables();
    let stats = parallel_map(runs, workers, |i| {
        let seed = base_seed + i as u64;
        episode_stats(fam, class, spec, &tunables, seed)
    });
    let failures = stats.iter().filter(|s| s.failed).count();
    BatchResult { stats, failures }
}

fn episode_stats(
    fam: &Family,
    class: OpponentClass,
    spec: &PlannerSpec,
    tunables: &crate::planners::Tunables,
    seed: u64,
) -> EpisodeStats {
    let failed = EpisodeStats {
        penalized: fam.upper_bound as f64,
        raw: fam.upper_bound as f64,
        collision: 0.0,
        plan_calls: 0,
        planning_ms: 0.0,
        fallbacks: 0,
        failed: true,
    };
    let scenario = match fam.scenario(class.pool(), seed) {
        Ok(s) => s,
        Err(e) => {
            log::error!("scenario {seed} of {}: {e}", fam.name);
            return failed;
        }
    };
    match class {
        OpponentClass::Rational | OpponentClass::Malicious => {
            match run_episode(&scenario, spec, tunables, seed) {
                Ok(record) => EpisodeStats {
                    penalized: penalized_length(&record, fam.upper_bound),
                    raw: record.modelling_path_length as f64,
                    collision: f64::from(u8::from(record.collided)),
                    plan_calls: record.step_ms.len(),
                    planning_ms: record.step_ms.iter().sum(),
                    fallbacks: record.fallbacks,
                    failed: false,
                },
                Err(e) => {
                    log::error!("episode {seed} of {} with {spec}: {e}", fam.name);
                    failed
                }
            }
        }
        OpponentClass::Selfplay => match run_selfplay(&scenario, spec, tunables, seed) {
            Ok(record) => {
                let per_agent = selfplay_penalized(&record, fam.upper_bound);
                let n = per_agent.len() as f64;
                let raw = record.finish.iter().map(|&f| f as f64).sum::<f64>() / n;
                let hit = record.collided.iter().filter(|&&c| c).count() as f64;
                EpisodeStats {
                    penalized: per_agent.iter().sum::<f64>() / n,
                    raw,
                    collision: hit / n,
                    plan_calls: record.plan_calls,
                    planning_ms: record.planning_ms,
                    fallbacks: record.fallbacks,
                    failed: false,
                }
            }
            Err(e) => {
                log::error!("selfplay episode {seed} of {} with {spec}: {e}", fam.name);
                failed
            }
        },
    }
}

/// One CSV row: a planner's aggregate over the batch.
#[derive(Debug, Clone)]
pub struct SuiteRow {
    pub family: String,
    pub class: OpponentClass,
    pub planner: String,
    pub runs: usize,
    pub mean_penalized: f64,
    pub std_penalized: f64,
    pub mean_raw: f64,
    pub std_raw: f64,
    pub collision_ratio: f64,
    pub mean_ms_per_step: f64,
    pub fallback_rate: f64,
    pub failures: usize,
}

pub const CSV_HEADER: &str = "scenario_family,opponent_class,planner,runs,mean_penalized,\
                              std_penalized,mean_raw,std_raw,collision_ratio,mean_ms_per_step,\
                              fallback_rate";

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub rows: Vec<SuiteRow>,
}

impl SuiteReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        for r in &self.rows {
            out.push('\n');
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.family,
                r.class,
                csv_quote(&r.planner),
                r.runs,
                r.mean_penalized,
                r.std_penalized,
                r.mean_raw,
                r.std_raw,
                r.collision_ratio,
                r.mean_ms_per_step,
                r.fallback_rate,
            ));
        }
        out.push('\n');
        out
    }
}

/// Planner specs contain commas, so their column is quoted.
pub fn csv_quote(field: &str) -> String {
    if field.contains(',') || field.contains('"') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Splits one CSV line into fields, honouring double-quoted fields.
pub fn csv_fields(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut current = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if quoted && chars.peek() == Some(&'"') => {
                current.push('"');
                chars.next();
            }
            '"' => quoted = !quoted,
            ',' if !quoted => fields.push(std::mem::take(&mut current)),
            _ => current.push(c),
        }
    }
    fields.push(current);
    fields
}

/// Runs the whole suite: every planner over the same seeded episode
/// list. Aggregates fold in episode order, so the report is identical
/// for any worker count (timing columns aside).
pub fn run_suite(config: &SuiteConfig) -> SuiteReport {
    let fam = config.family();
    let workers = resolve_workers(config.workers);
    let rows = config
        .planners
        .iter()
        .map(|spec| {
            let batch = run_batch(fam, config.class, spec, config.runs, config.base_seed, workers);
            aggregate(fam, config.class, spec, &batch)
        })
        .collect();
    SuiteReport { rows }
}

fn aggregate(
    fam: &Family,
    class: OpponentClass,
    spec: &PlannerSpec,
    batch: &BatchResult,
) -> SuiteRow {
    let penalized: Vec<f64> = batch.stats.iter().map(|s| s.penalized).collect();
    let raw: Vec<f64> = batch.stats.iter().map(|s| s.raw).collect();
    let (mean_penalized, std_penalized) = mean_std(&penalized);
    let (mean_raw, std_raw) = mean_std(&raw);
    let collision_ratio =
        batch.stats.iter().map(|s| s.collision).sum::<f64>() / batch.stats.len().max(1) as f64;
    let calls: usize = batch.stats.iter().map(|s| s.plan_calls).sum();
    let ms: f64 = batch.stats.iter().map(|s| s.planning_ms).sum();
    let fallbacks: u32 = batch.stats.iter().map(|s| s.fallbacks).sum();
    SuiteRow {
        family: fam.name.to_string(),
        class,
        planner: spec.to_string(),
        runs: batch.stats.len(),
        mean_penalized,
        std_penalized,
        mean_raw,
        std_raw,
        collision_ratio,
        mean_ms_per_step: if calls == 0 { 0.0 } else { ms / calls as f64 },
        fallback_rate: if calls == 0 { 0.0 } else { f64::from(fallbacks) / calls as f64 },
        failures: batch.failures,
    }
}

/// Maps `f` over `0..n` on a small worker pool. Workers pull indices
/// from a shared counter; results land in their own slots, so the
/// output order never depends on scheduling.
fn parallel_map<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let done = Mutex::new(Vec::with_capacity(n));
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let result = f(i);
                done.lock().expect("no worker panicked").push((i, result));
            });
        }
    });
    let mut done = done.into_inner().expect("no worker panicked");
    done.sort_by_key(|&(i, _)| i);
    done.into_iter().map(|(_, result)| result).collect()
}

/// Percentile bootstrap confidence interval for a mean, seeded so the
/// same inputs always give the same interval.
pub fn bootstrap_mean_ci(values: &[f64], level: f64, resamples: usize, seed: u64) -> (f64, f64) {
    assert!(!values.is_empty(), "bootstrap needs at least one value");
    assert!(level > 0.0 && level < 1.0);
    let mut rng = rng_for(seed, Stream::Suite, 0);
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let last = means.len() - 1;
    let at = |q: f64| means[((last as f64) * q).round() as usize];
    let tail = (1.0 - level) / 2.0;
    (at(tail), at(1.0 - tail))
}

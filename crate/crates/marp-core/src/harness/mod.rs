//! Benchmark harness: named scenario families, the episode runner, and
//! suite execution with CSV reporting.
//!
//! The harness owns everything between "a planner spec string" and "a
//! row of aggregate numbers": it generates seeded scenarios from a
//! family, runs episodes against an opponent class, penalizes failures
//! at the family's step cap, and folds per-episode stats into one CSV
//! row per planner. Seeds are assigned as `base_seed + episode index`,
//! so results are identical regardless of how many workers process the
//! queue.

mod episode;
mod families;
mod suite;

pub use episode::{
    compute_bounds, penalized_length, run_episode, run_selfplay, selfplay_penalized, Bounds,
    EpisodeRecord, OpponentClass, SelfplayRecord,
};
pub use families::{family, Family, FAMILIES};
pub use suite::{
    bootstrap_mean_ci, csv_fields, csv_quote, resolve_workers, run_batch, run_suite, BatchResult,
    EpisodeStats, SuiteConfig, SuiteError, SuiteReport, SuiteRow, CSV_HEADER,
};

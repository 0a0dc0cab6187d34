//! Joint-plan oracle: conflict-based search over grid maps.
//!
//! A set of collision-free paths that is (near-)optimal in sum-of-costs
//! is read as a sample equilibrium: no agent can shorten its own path
//! without running into somebody. The planners use this oracle to turn
//! sampled opponent goals into leaf values and action priors
//! ([`ne_eval`]); the CLI exposes it standalone via `solve`.

mod cbs;
mod eval;
mod space_time;

pub use cbs::{bounded_cbs, cbs, plan_conflicts, CbsError, CbsLimits, Conflict, NePlan};
pub(crate) use eval::draw_goal;
pub use eval::{ne_eval, ne_eval_cached, NeEvalResult, SolveCache};
pub use space_time::{space_time_astar, ConstraintSet};

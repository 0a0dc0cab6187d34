//! Leaf evaluators for the tree searches.
//!
//! An evaluator scores a frontier state with a value estimate and a
//! per-action score vector the searches can turn into priors. The
//! cheap ones ignore the opponents entirely; the expensive one samples
//! opponent goals from the belief and solves the resulting one-shot
//! path-coordination problem.

use rand_chacha::ChaCha8Rng;

use crate::belief::Belief;
use crate::env::{bfs_distance, DistanceField, JointState, MoveAction};
use crate::model::AgentModel;
use crate::ne_oracle::{ne_eval_cached, CbsLimits, SolveCache};
use crate::solvers::{solve_context_mdps, ContextTables};

use super::{EvalKind, PlannerError, PlannerView};

pub enum Evaluator {
    /// Scores everything zero; reduces the search to its rollout rewards.
    Zero,
    /// Discounted own-goal distance, opponents ignored.
    ShortestPath { field: DistanceField },
    /// Sampled joint plans via bounded conflict-based search.
    Cbs { cache: SolveCache, samples: usize, suboptimality: f64, limits: CbsLimits },
    /// Belief-mixed Q-values from the per-context induced MDPs.
    Qmdp { tables: ContextTables },
}

impl Evaluator {
    /// The context-table variant solves its MDPs up front, so building
    /// an evaluator can fail on capacity.
    pub fn build(
        kind: EvalKind,
        view: &PlannerView,
        model: &AgentModel,
        belief: &Belief,
    ) -> Result<Self, PlannerError> {
        let t = &view.tunables;
        Ok(match kind {
            EvalKind::Zero => Evaluator::Zero,
            EvalKind::ShortestPath => {
                Evaluator::ShortestPath { field: bfs_distance(&view.map, view.own_goal)? }
            }
            EvalKind::Cbs => Evaluator::Cbs {
                cache: SolveCache::default(),
                samples: t.eval_samples,
                suboptimality: t.suboptimality,
                limits: t.cbs_limits.clone(),
            },
            EvalKind::Qmdp => Evaluator::Qmdp {
                tables: solve_context_mdps(
                    model,
                    belief,
                    &view.initial,
                    t.context_cap,
                    t.state_cap,
                    t.vi_tol,
                )?,
            },
        })
    }

    /// Value estimate and per-action scores at `state` under `belief`.
    pub fn evaluate(
        &mut self,
        model: &AgentModel,
        state: &JointState,
        belief: &Belief,
        rng: &mut ChaCha8Rng,
    ) -> (f64, [f64; 5]) {
        match self {
            Evaluator::Zero => (0.0, [0.0; 5]),
            Evaluator::ShortestPath { field } => {
                let own = state.positions[model.own_index];
                let discounted = |d: u32| {
                    if d == DistanceField::INFINITE {
                        0.0
                    } else {
                        model.gamma.powi(d as i32) * model.rewards.goal_reward
                    }
                };
                let mut scores = [0.0; 5];
                for (i, action) in MoveAction::ALL.iter().enumerate() {
                    let landing = model.map.resolve(own, *action);
                    scores[i] = if field.get(landing) == DistanceField::INFINITE {
                        0.0
                    } else {
                        model.gamma * discounted(field.get(landing))
                    };
                }
                (discounted(field.get(own)), scores)
            }
            Evaluator::Cbs { cache, samples, suboptimality, limits } => {
                let result = ne_eval_cached(
                    state,
                    belief,
                    model.own_index,
                    model.own_goal,
                    *samples,
                    model.gamma,
                    &model.rewards,
                    *suboptimality,
                    limits,
                    rng,
                    cache,
                );
                (result.value_estimate, result.policy_prior)
            }
            Evaluator::Qmdp { tables } => match tables.mixed_q(state, belief) {
                Ok(q) => {
                    let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    (best, q)
                }
                Err(err) => {
                    // Only states outside the compiled reachable set end
                    // up here; the searches never should, since they
                    // step the same model the tables were built from.
                    debug_assert!(false, "context tables missed a search state: {err}");
                    (0.0, [0.0; 5])
                }
            },
        }
    }
}

//! Leaf evaluation by sampled joint plans.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::belief::Belief;
use crate::env::{Cell, JointState, MoveAction};
use crate::model::RewardParams;

use super::cbs::{bounded_cbs, CbsLimits};

/// Mean leaf value and first-action prior over sampled plans.
#[derive(Debug, Clone, PartialEq)]
pub struct NeEvalResult {
    pub value_estimate: f64,
    pub policy_prior: [f64; 5],
}

/// Memo of solved instances, keyed by starts, goals and masked cells.
/// One joint state recurs across many tree paths; reusing the solve
/// keeps leaf evaluation affordable without changing any result.
#[derive(Default)]
pub struct SolveCache {
    map: HashMap<(Vec<Cell>, Vec<Cell>, Vec<Cell>), Option<(usize, MoveAction)>>,
}

impl SolveCache {
    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Draws one cell from the weighted hypothesis goals, skipping `taken`.
/// Scans hypotheses in index order, so the draw is deterministic in the
/// RNG stream.
pub(crate) fn draw_goal(
    belief: &Belief,
    slot: usize,
    taken: &HashSet<Cell>,
    rng: &mut ChaCha8Rng,
) -> Option<Cell> {
    let policies = belief.hypothesis_set().policies();
    let probs = belief.probs(slot);
    let total: f64 = probs
        .iter()
        .zip(policies)
        .filter(|(_, pol)| !taken.contains(&pol.goal))
        .map(|(&p, _)| p)
        .sum();
    if total <= 0.0 {
        return None;
    }
    let mut u = rng.gen::<f64>() * total;
    let mut last = None;
    for (&p, pol) in probs.iter().zip(policies) {
        if p <= 0.0 || taken.contains(&pol.goal) {
            continue;
        }
        last = Some(pol.goal);
        u -= p;
        if u <= 0.0 {
            return last;
        }
    }
    last
}

/// Estimates the value of a joint state by repeatedly sampling opponent
/// goals from the belief, solving the resulting pathfinding instance,
/// and reading off the modelling agent's own path: a plan of length l
/// starting with action a contributes value gamma^l * goal_reward and a
/// one-hot prior on a. Failed or infeasible samples contribute value 0
/// and a uniform prior, so the estimate is always defined.
///
/// Goals are drawn per opponent without replacement (true goals are
/// pairwise distinct), and opponents already flagged as arrived become
/// map obstacles rather than planned agents.
#[allow(clippy::too_many_arguments)]
pub fn ne_eval(
    state: &JointState,
    belief: &Belief,
    own_index: usize,
    own_goal: Cell,
    samples: usize,
    gamma: f64,
    rewards: &RewardParams,
    w: f64,
    limits: &CbsLimits,
    rng: &mut ChaCha8Rng,
) -> NeEvalResult {
    let mut cache = SolveCache::default();
    ne_eval_cached(
        state, belief, own_index, own_goal, samples, gamma, rewards, w, limits, rng, &mut cache,
    )
}

/// [`ne_eval`] with a caller-owned solve cache, for callers that
/// evaluate many related states.
#[allow(clippy::too_many_arguments)]
pub fn ne_eval_cached(
    state: &JointState,
    belief: &Belief,
    own_index: usize,
    own_goal: Cell,
    samples: usize,
    gamma: f64,
    rewards: &RewardParams,
    w: f64,
    limits: &CbsLimits,
    rng: &mut ChaCha8Rng,
    cache: &mut SolveCache,
) -> NeEvalResult {
    assert!(samples >= 1, "need at least one sample");
    let own_pos = state.positions[own_index];
    if own_pos == own_goal {
        let mut prior = [0.0; 5];
        prior[MoveAction::Stay.index()] = 1.0;
        return NeEvalResult { value_estimate: rewards.goal_reward, policy_prior: prior };
    }

    // Arrived opponents turn into obstacles; the rest get planned.
    let mut live_slots = Vec::new();
    let mut obstacles = Vec::new();
    for (slot, &agent) in belief.opponents().iter().enumerate() {
        if state.arrived[agent] {
            obstacles.push(state.positions[agent]);
        } else {
            live_slots.push((slot, agent));
        }
    }
    obstacles.sort_unstable_by_key(|c| (c.row, c.col));
    let map = belief.hypothesis_set().map();
    let masked = if obstacles.is_empty() { None } else { Some(map.with_obstacles(&obstacles)) };
    let solve_map = masked.as_ref().unwrap_or(map);

    let mut base_taken: HashSet<Cell> = obstacles.iter().copied().collect();
    base_taken.insert(own_goal);

    let mut value_sum = 0.0;
    let mut prior_sum = [0.0f64; 5];

    for _ in 0..samples {
        let mut taken = base_taken.clone();
        let mut goals = vec![own_goal];
        let mut ok = true;
        for &(slot, _) in &live_slots {
            match draw_goal(belief, slot, &taken, rng) {
                Some(g) => {
                    taken.insert(g);
                    goals.push(g);
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }

        let outcome = if ok {
            let mut starts = vec![own_pos];
            starts.extend(live_slots.iter().map(|&(_, agent)| state.positions[agent]));
            let key = (starts.clone(), goals.clone(), obstacles.clone());
            match cache.map.get(&key) {
                Some(hit) => *hit,
                None => {
                    let solved = bounded_cbs(solve_map, &starts, &goals, w, limits)
                        .ok()
                        .map(|plan| (plan.cost_of(0), plan.first_action(0)));
                    cache.map.insert(key, solved);
                    solved
                }
            }
        } else {
            None
        };

        match outcome {
            Some((l, a0)) => {
                value_sum += gamma.powi(l as i32) * rewards.goal_reward;
                prior_sum[a0.index()] += 1.0;
            }
            // Failed sample: value 0, uniform prior mass.
            None => {
                for p in prior_sum.iter_mut() {
                    *p += 0.2;
                }
            }
        }
    }

    let inv = 1.0 / samples as f64;
    let mut prior = [0.0; 5];
    for (p, s) in prior.iter_mut().zip(prior_sum) {
        *p = s * inv;
    }
    NeEvalResult { value_estimate: value_sum * inv, policy_prior: prior }
}

//! Factored beliefs over opponent types.
//!
//! Each opponent gets its own probability vector over a shared set of
//! goal hypotheses; the joint belief is the product of the per-opponent
//! vectors. Updates follow the tempered Bayes rule
//! `b'(π) ∝ (π(a|S) · b(π))^(1/β)` independently per opponent, with
//! β = 1 the exact posterior and the hard-max marker the β → 0 limit.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{Cell, GridMap, JointState, MoveAction};
use crate::opponents::HypothesisPolicy;

/// Update temperature. The β → 0 limit is an explicit marker rather
/// than a tiny float, since the 1/β exponent overflows long before the
/// limit behavior appears.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BeliefTemperature {
    Beta(f64),
    HardMax,
}

impl BeliefTemperature {
    pub const EXACT: BeliefTemperature = BeliefTemperature::Beta(1.0);
}

/// The hypothesis space shared by every opponent of one modelling
/// agent: one ε-softened policy per candidate goal cell.
#[derive(Debug)]
pub struct HypothesisSet {
    map: Arc<GridMap>,
    policies: Vec<HypothesisPolicy>,
}

impl HypothesisSet {
    pub fn policies(&self) -> &[HypothesisPolicy] {
        &self.policies
    }

    pub fn map(&self) -> &Arc<GridMap> {
        &self.map
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }
}

/// Per-opponent belief vectors over a shared [`HypothesisSet`].
/// Snapshots are cheap to clone: the hypothesis set is shared, only
/// probabilities are copied.
#[derive(Debug, Clone)]
pub struct Belief {
    set: Arc<HypothesisSet>,
    opponents: Vec<usize>,
    probs: Vec<Vec<f64>>,
}

/// Uniform prior over one hypothesis per passable cell. The modelling
/// agent's own goal is excluded by default: nobody else may be assigned
/// it in a valid scenario. `include_own_goal` restores the literal
/// all-empty-cells reading.
pub fn init_belief(
    map: &Arc<GridMap>,
    opponent_indices: &[usize],
    own_goal: Cell,
    epsilon: f64,
    include_own_goal: bool,
) -> Belief {
    let mut policies = Vec::new();
    for cell in map.passable_cells() {
        if !include_own_goal && cell == own_goal {
            continue;
        }
        policies.push(
            HypothesisPolicy::new(map, cell, epsilon).expect("passable goal candidate"),
        );
    }
    let k = policies.len();
    let set = Arc::new(HypothesisSet { map: map.clone(), policies });
    Belief {
        set,
        opponents: opponent_indices.to_vec(),
        probs: vec![vec![1.0 / k as f64; k]; opponent_indices.len()],
    }
}

impl Belief {
    /// Agent indices of the modelled opponents, in slot order.
    pub fn opponents(&self) -> &[usize] {
        &self.opponents
    }

    pub fn hypothesis_set(&self) -> &Arc<HypothesisSet> {
        &self.set
    }

    /// Probability vector for opponent slot `slot`.
    pub fn probs(&self, slot: usize) -> &[f64] {
        &self.probs[slot]
    }

    /// Replaces one opponent's vector; used by tests and by planners
    /// that pin a diagnosed opponent.
    pub fn with_probs(&self, slot: usize, probs: Vec<f64>) -> Belief {
        assert_eq!(probs.len(), self.set.len());
        let mut out = self.clone();
        out.probs[slot] = probs;
        out
    }

    /// Point-mass belief on one hypothesis per opponent.
    pub fn point_mass(&self, hyp_indices: &[usize]) -> Belief {
        assert_eq!(hyp_indices.len(), self.opponents.len());
        let mut out = self.clone();
        for (slot, &h) in hyp_indices.iter().enumerate() {
            let mut v = vec![0.0; self.set.len()];
            v[h] = 1.0;
            out.probs[slot] = v;
        }
        out
    }

    /// Posterior mass opponent `slot` puts on goal cell `goal`, summed
    /// in case several hypotheses share it (they never do today).
    pub fn mass_on_goal(&self, slot: usize, goal: Cell) -> f64 {
        self.set
            .policies
            .iter()
            .zip(&self.probs[slot])
            .filter(|(p, _)| p.goal == goal)
            .map(|(_, &w)| w)
            .sum()
    }

    /// Debug/replay dump: per opponent, `goal=prob` pairs in row-major
    /// goal order. Also the bit-equality witness for snapshot tests.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (slot, agent) in self.opponents.iter().enumerate() {
            write!(out, "opponent {agent}:").unwrap();
            for (policy, &p) in self.set.policies.iter().zip(&self.probs[slot]) {
                write!(out, " {}={}", policy.goal, p).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Tempered Bayes update from one observed move per opponent slot
/// (aligned with `belief.opponents()`). Observed moves are outcomes:
/// a blocked move shows up, and is scored, as `Stay`.
pub fn update(
    belief: &Belief,
    state: &JointState,
    observed: &[MoveAction],
    beta: BeliefTemperature,
) -> Belief {
    assert_eq!(observed.len(), belief.opponents.len());
    let map = belief.set.map();
    let mut out = belief.clone();
    for (slot, &agent) in belief.opponents.iter().enumerate() {
        let cell = state.positions[agent];
        let action = observed[slot];
        let prior = &belief.probs[slot];
        let mut posterior: Vec<f64> = belief
            .set
            .policies
            .iter()
            .zip(prior)
            .map(|(policy, &p)| policy.action_dist(map, cell)[action.index()] * p)
            .collect();
        let total: f64 = posterior.iter().sum();
        if total <= 0.0 {
            // Every hypothesis rules the observation out (possible only
            // with ε = 0); keep the prior rather than inventing mass.
            continue;
        }
        match beta {
            BeliefTemperature::Beta(b) if b == 1.0 => {
                for p in &mut posterior {
                    *p /= total;
                }
            }
            BeliefTemperature::Beta(b) => {
                assert!(b > 0.0, "temperature must be positive");
                let peak = posterior.iter().cloned().fold(0.0, f64::max);
                let mut sum = 0.0;
                for p in &mut posterior {
                    // Normalizing by the peak keeps the 1/β power in
                    // range; the factor cancels below.
                    *p = (*p / peak).powf(1.0 / b);
                    sum += *p;
                }
                for p in &mut posterior {
                    *p /= sum;
                }
            }
            BeliefTemperature::HardMax => {
                let peak = posterior.iter().cloned().fold(0.0, f64::max);
                let mut n = 0usize;
                for p in &mut posterior {
                    *p = if *p == peak { 1.0 } else { 0.0 };
                    n += (*p > 0.0) as usize;
                }
                for p in &mut posterior {
                    *p /= n as f64;
                }
            }
        }
        out.probs[slot] = posterior;
    }
    out
}

/// Factored distribution over joint opponent actions: independent
/// per-opponent marginals mixing each hypothesis by its belief weight.
#[derive(Debug, Clone)]
pub struct JointActionDist {
    marginals: Vec<[f64; 5]>,
}

impl JointActionDist {
    pub fn marginal(&self, slot: usize) -> &[f64; 5] {
        &self.marginals[slot]
    }

    pub fn marginals(&self) -> &[[f64; 5]] {
        &self.marginals
    }

    /// Enumerates the support of the full product distribution as
    /// (one move per opponent slot, joint probability). Exponential in
    /// the opponent count; callers at scale sample instead.
    pub fn enumerate(&self) -> Vec<(Vec<MoveAction>, f64)> {
        let mut out = vec![(Vec::new(), 1.0)];
        for marginal in &self.marginals {
            let mut next = Vec::with_capacity(out.len() * 5);
            for (prefix, p) in &out {
                for action in MoveAction::ALL {
                    let q = marginal[action.index()];
                    if q > 0.0 {
                        let mut joint = prefix.clone();
                        joint.push(action);
                        next.push((joint, p * q));
                    }
                }
            }
            out = next;
        }
        out
    }
}

pub fn joint_action_dist(belief: &Belief, state: &JointState) -> JointActionDist {
    let map = belief.set.map();
    let marginals = belief
        .opponents
        .iter()
        .zip(&belief.probs)
        .map(|(&agent, probs)| {
            let cell = state.positions[agent];
            let mut marginal = [0.0; 5];
            for (policy, &w) in belief.set.policies.iter().zip(probs) {
                if w == 0.0 {
                    continue;
                }
                let dist = policy.action_dist(map, cell);
                for i in 0..5 {
                    marginal[i] += w * dist[i];
                }
            }
            marginal
        })
        .collect();
    JointActionDist { marginals }
}

/// Slots whose last `k` recorded positions are identical. Histories
/// shorter than `k` are never flagged.
pub fn detect_stationary(histories: &[Vec<Cell>], k: usize) -> Vec<usize> {
    histories
        .iter()
        .enumerate()
        .filter(|(_, h)| {
            h.len() >= k && k >= 1 && h[h.len() - k..].iter().all(|&c| c == h[h.len() - 1])
        })
        .map(|(i, _)| i)
        .collect()
}

//! Uniform-width lookahead over own actions and belief-weighted joint
//! opponent moves.
//!
//! The tree interleaves decision levels (own action) and expectation
//! levels (joint opponent move). Beliefs follow the edges for the first
//! `n` levels and stay frozen below, so a subtree below the update
//! frontier shares one belief and collapses through the memo. At the
//! frontier the search hands over to a leaf evaluator after `m` more
//! frozen levels, or solves the induced MDP outright when `m` is the
//! infinite marker.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::belief::{joint_action_dist, update, Belief, BeliefTemperature};
use crate::env::{JointState, MoveAction};
use crate::model::AgentModel;
use crate::solvers::solve_induced;

use super::{argmax_action, BackupRule, DepthBound, Evaluator};
use super::{Planner, PlannerBase, PlannerError, PlannerView, TsConfig};

/// The node budget ran out mid-search; the caller should degrade
/// gracefully instead of acting on half a backup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchExhausted;

/// One search invocation. Borrows the model and evaluator, owns the
/// memo; build it fresh per decision.
pub struct UtsSearch<'a> {
    model: &'a AgentModel,
    cfg: &'a TsConfig,
    evaluator: &'a mut Evaluator,
    rng: &'a mut ChaCha8Rng,
    budget: usize,
    state_cap: usize,
    vi_tol: f64,
    /// Keyed by belief identity, state and height. Frozen subtrees
    /// share one belief allocation, so pointer equality is belief
    /// equality there and repeated states fold together.
    memo: HashMap<(usize, JointState, usize), f64>,
}

impl<'a> UtsSearch<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &'a AgentModel,
        cfg: &'a TsConfig,
        evaluator: &'a mut Evaluator,
        rng: &'a mut ChaCha8Rng,
        budget: usize,
        state_cap: usize,
        vi_tol: f64,
    ) -> Self {
        UtsSearch { model, cfg, evaluator, rng, budget, state_cap, vi_tol, memo: HashMap::new() }
    }

    /// Backed-up value of each own action at `state`. The caller is
    /// expected to have filtered terminal states.
    pub fn root_scores(
        &mut self,
        state: &JointState,
        belief: &Belief,
    ) -> Result<[f64; 5], SearchExhausted> {
        if self.cfg.n == 0 {
            match self.cfg.m {
                // No lookahead at all: the evaluator's action scores.
                DepthBound::Finite(0) => {
                    let (_, scores) = self.evaluator.evaluate(self.model, state, belief, self.rng);
                    return Ok(scores);
                }
                // No belief updates, full horizon: the induced MDP's
                // Q-values at the root state.
                DepthBound::Infinite => {
                    let solved =
                        solve_induced(self.model, belief, state, self.state_cap, self.vi_tol)
                            .map_err(|_| SearchExhausted)?;
                    let s = solved.mdp.lookup(state).ok_or(SearchExhausted)?;
                    let mut scores = [0.0; 5];
                    scores.copy_from_slice(&solved.solution.q[s]);
                    return Ok(scores);
                }
                DepthBound::Finite(_) => {}
            }
        }
        let belief = Arc::new(belief.clone());
        let mut scores = [0.0; 5];
        for (i, action) in MoveAction::ALL.iter().enumerate() {
            scores[i] = self.exp_val(state, &belief, 0, *action)?;
        }
        Ok(scores)
    }

    fn max_val(
        &mut self,
        state: &JointState,
        belief: &Arc<Belief>,
        height: usize,
    ) -> Result<f64, SearchExhausted> {
        let key = (Arc::as_ptr(belief) as usize, state.clone(), height);
        if let Some(&v) = self.memo.get(&key) {
            return Ok(v);
        }
        if self.budget == 0 {
            return Err(SearchExhausted);
        }
        self.budget -= 1;

        let at_frontier = match self.cfg.m {
            DepthBound::Finite(m) => height == self.cfg.n + m,
            DepthBound::Infinite => height == self.cfg.n,
        };
        let value = if at_frontier {
            match self.cfg.m {
                DepthBound::Infinite => {
                    solve_induced(self.model, belief, state, self.state_cap, self.vi_tol)
                        .map_err(|_| SearchExhausted)?
                        .root_value()
                }
                DepthBound::Finite(_) => {
                    self.evaluator.evaluate(self.model, state, belief, self.rng).0
                }
            }
        } else {
            let mut best = f64::NEG_INFINITY;
            for action in MoveAction::ALL {
                best = best.max(self.exp_val(state, belief, height, action)?);
            }
            best
        };
        self.memo.insert(key, value);
        Ok(value)
    }

    /// Expectation over joint opponent moves of acting `own` at
    /// `state`. Joints are folded to their resolved deltas first (a
    /// blocked move and a stay land the same world), which both dedups
    /// the recursion and matches what the belief update will observe.
    fn exp_val(
        &mut self,
        state: &JointState,
        belief: &Arc<Belief>,
        height: usize,
        own: MoveAction,
    ) -> Result<f64, SearchExhausted> {
        match self.cfg.backup {
            BackupRule::Exact => {
                let dist = joint_action_dist(belief, state);
                let mut order: Vec<(Vec<MoveAction>, f64)> = Vec::new();
                let mut seen: HashMap<u64, usize> = HashMap::new();
                for (joint, p) in dist.enumerate() {
                    if p <= 0.0 {
                        continue;
                    }
                    let canon = self.canonical(state, belief, &joint);
                    match seen.entry(joint_code(&canon)) {
                        std::collections::hash_map::Entry::Occupied(e) => {
                            order[*e.get()].1 += p;
                        }
                        std::collections::hash_map::Entry::Vacant(e) => {
                            e.insert(order.len());
                            order.push((canon, p));
                        }
                    }
                }
                let mut total = 0.0;
                for (joint, p) in &order {
                    total += p * self.child_backup(state, belief, height, own, joint)?;
                }
                Ok(total)
            }
            BackupRule::Sampled(k) => {
                let k = k.expect("sample count resolved at build time");
                let dist = joint_action_dist(belief, state);
                let slots = belief.opponents().len();
                let mut cache: HashMap<u64, f64> = HashMap::new();
                let mut total = 0.0;
                for _ in 0..k {
                    let mut joint = Vec::with_capacity(slots);
                    for slot in 0..slots {
                        joint.push(draw_action(dist.marginal(slot), self.rng));
                    }
                    let canon = self.canonical(state, belief, &joint);
                    let code = joint_code(&canon);
                    let backed = match cache.get(&code) {
                        Some(&v) => v,
                        None => {
                            let v = self.child_backup(state, belief, height, own, &canon)?;
                            cache.insert(code, v);
                            v
                        }
                    };
                    total += backed;
                }
                Ok(total / k as f64)
            }
        }
    }

    /// Resolved per-slot deltas of an intended joint: arrived opponents
    /// hold still, blocked moves become stays.
    fn canonical(
        &self,
        state: &JointState,
        belief: &Belief,
        joint: &[MoveAction],
    ) -> Vec<MoveAction> {
        belief
            .opponents()
            .iter()
            .zip(joint)
            .map(|(&agent, &action)| {
                if state.arrived[agent] {
                    MoveAction::Stay
                } else {
                    let from = state.positions[agent];
                    MoveAction::between(from, self.model.map.resolve(from, action))
                        .expect("resolve keeps unit moves")
                }
            })
            .collect()
    }

    fn child_backup(
        &mut self,
        state: &JointState,
        belief: &Arc<Belief>,
        height: usize,
        own: MoveAction,
        joint: &[MoveAction],
    ) -> Result<f64, SearchExhausted> {
        let out = self.model.step(state, own, belief.opponents(), joint);
        if out.terminal {
            return Ok(out.reward);
        }
        let next_belief = if height < self.cfg.n {
            Arc::new(update(belief, state, joint, BeliefTemperature::EXACT))
        } else {
            Arc::clone(belief)
        };
        let v = self.max_val(&out.next, &next_belief, height + 1)?;
        Ok(out.reward + self.model.gamma * v)
    }
}

/// Mixed-radix code of a joint move, for dedup keys.
fn joint_code(joint: &[MoveAction]) -> u64 {
    joint.iter().fold(0u64, |code, action| code * 5 + action.index() as u64)
}

fn draw_action(marginal: &[f64; 5], rng: &mut ChaCha8Rng) -> MoveAction {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = MoveAction::Stay;
    for (i, &p) in marginal.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last = MoveAction::ALL[i];
        acc += p;
        if u < acc {
            return last;
        }
    }
    last
}

pub struct UtsPlanner {
    base: PlannerBase,
    cfg: TsConfig,
    evaluator: Evaluator,
}

impl UtsPlanner {
    pub fn new(view: &PlannerView, cfg: TsConfig) -> Result<Self, PlannerError> {
        let base = PlannerBase::new(view)?;
        let evaluator = Evaluator::build(cfg.eval, view, &base.model, &base.belief)?;
        Ok(UtsPlanner { base, cfg, evaluator })
    }
}

impl Planner for UtsPlanner {
    fn reset(&mut self) {
        self.base.reset();
    }

    fn act(&mut self, state: &JointState) -> MoveAction {
        let state = self.base.model.observe_state(state);
        if self.base.model.is_terminal(&state) {
            return MoveAction::Stay;
        }
        let t = &self.base.view.tunables;
        let mut search = UtsSearch::new(
            &self.base.model,
            &self.cfg,
            &mut self.evaluator,
            &mut self.base.rng,
            t.node_cap,
            t.state_cap,
            t.vi_tol,
        );
        match search.root_scores(&state, &self.base.belief) {
            Ok(scores) => argmax_action(&scores),
            Err(SearchExhausted) => self.base.safe_fallback(&state, "search budget exhausted"),
        }
    }

    fn observe(&mut self, state: &JointState, actions: &[MoveAction]) {
        self.base.observe_update(state, actions);
    }

    fn fallbacks(&self) -> u32 {
        self.base.fallbacks
    }
}

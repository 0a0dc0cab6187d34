//! Monte Carlo tree search over the same decision/expectation tree as
//! the uniform search, grown asymmetrically under an iteration budget.
//!
//! Decision nodes hold the modelling agent's states and are scored by
//! visit averages; expectation nodes branch on sampled joint opponent
//! moves drawn from a mean policy (a fresh hypothesis resample per
//! visit). The belief follows every edge. Node values start from a
//! leaf evaluation and accumulate backed-up returns, so `v / N` is the
//! running mean return through that node.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::belief::{update, Belief, BeliefTemperature};
use crate::env::{JointState, MoveAction};
use crate::model::AgentModel;

use super::{Evaluator, Planner, PlannerBase, PlannerError};
use super::{PlannerView, SelectionRule, TsConfig};

enum NodeKind {
    Max { children: [Option<usize>; 5], next_untried: usize },
    /// Children keyed by the mixed-radix code of the resolved joint.
    Exp { children: HashMap<u64, usize> },
}

struct Node {
    parent: Option<usize>,
    kind: NodeKind,
    state: JointState,
    belief: Arc<Belief>,
    /// Reward on the edge into this node; folded during backup, so it
    /// lives only on decision nodes.
    reward: f64,
    /// For expectation nodes, the own action that created them.
    own_action: Option<MoveAction>,
    v: f64,
    n: u32,
    evaluated: bool,
    terminal: bool,
    /// Own-action priors from this node's evaluation (decision nodes).
    prior: [f64; 5],
}

struct Tree<'a> {
    model: &'a AgentModel,
    cfg: &'a TsConfig,
    evaluator: &'a mut Evaluator,
    rng: &'a mut ChaCha8Rng,
    arena: Vec<Node>,
}

impl<'a> Tree<'a> {
    fn new(
        model: &'a AgentModel,
        cfg: &'a TsConfig,
        evaluator: &'a mut Evaluator,
        rng: &'a mut ChaCha8Rng,
        state: JointState,
        belief: Arc<Belief>,
    ) -> Self {
        let root = Node {
            parent: None,
            kind: NodeKind::Max { children: [None; 5], next_untried: 0 },
            state,
            belief,
            reward: 0.0,
            own_action: None,
            v: 0.0,
            n: 0,
            evaluated: false,
            terminal: false,
            prior: [0.0; 5],
        };
        Tree { model, cfg, evaluator, rng, arena: vec![root] }
    }

    /// One select-expand walk from the root; returns the decision node
    /// to evaluate (fresh, or a terminal re-visit).
    fn select_and_expand(&mut self) -> usize {
        let mut cur = 0;
        loop {
            if let NodeKind::Max { next_untried, .. } = self.arena[cur].kind {
                if !self.arena[cur].evaluated || self.arena[cur].terminal {
                    return cur;
                }
                if next_untried < 5 {
                    let action = MoveAction::ALL[next_untried];
                    if let NodeKind::Max { next_untried, .. } = &mut self.arena[cur].kind {
                        *next_untried += 1;
                    }
                    let exp = self.new_exp(cur, action);
                    if let NodeKind::Max { children, .. } = &mut self.arena[cur].kind {
                        children[action.index()] = Some(exp);
                    }
                    let joint = self.sample_joint(exp);
                    return self.new_max(exp, &joint);
                }
                cur = self.balanced_choice(cur);
            } else {
                let joint = self.sample_joint(cur);
                let code = joint_code(&joint);
                let existing = match &self.arena[cur].kind {
                    NodeKind::Exp { children } => children.get(&code).copied(),
                    NodeKind::Max { .. } => unreachable!(),
                };
                match existing {
                    Some(child) => cur = child,
                    None => return self.new_max(cur, &joint),
                }
            }
        }
    }

    fn new_exp(&mut self, parent: usize, action: MoveAction) -> usize {
        let node = Node {
            parent: Some(parent),
            kind: NodeKind::Exp { children: HashMap::new() },
            state: self.arena[parent].state.clone(),
            belief: Arc::clone(&self.arena[parent].belief),
            reward: 0.0,
            own_action: Some(action),
            v: 0.0,
            n: 0,
            evaluated: false,
            terminal: false,
            prior: [0.0; 5],
        };
        self.arena.push(node);
        self.arena.len() - 1
    }

    /// Steps the model through an expectation node's own action and a
    /// resolved joint opponent move, updating the belief on the edge.
    fn new_max(&mut self, parent: usize, joint: &[MoveAction]) -> usize {
        let own = self.arena[parent].own_action.expect("expectation nodes carry the own action");
        let state = &self.arena[parent].state;
        let belief = &self.arena[parent].belief;
        let out = self.model.step(state, own, belief.opponents(), joint);
        let next_belief = Arc::new(update(belief, state, joint, BeliefTemperature::EXACT));
        let node = Node {
            parent: Some(parent),
            kind: NodeKind::Max { children: [None; 5], next_untried: 0 },
            state: out.next,
            belief: next_belief,
            reward: out.reward,
            own_action: None,
            v: 0.0,
            n: 0,
            evaluated: false,
            terminal: out.terminal,
            prior: [0.0; 5],
        };
        self.arena.push(node);
        let id = self.arena.len() - 1;
        if let NodeKind::Exp { children } = &mut self.arena[parent].kind {
            children.insert(joint_code(joint), id);
        }
        id
    }

    /// Resampled mean opponent policy at an expectation node, one joint
    /// draw from it, folded to resolved deltas.
    fn sample_joint(&mut self, node: usize) -> Vec<MoveAction> {
        let state = &self.arena[node].state;
        let belief = &self.arena[node].belief;
        let map = &self.model.map;
        let mut joint = Vec::with_capacity(belief.opponents().len());
        for (slot, &agent) in belief.opponents().iter().enumerate() {
            if state.arrived[agent] {
                joint.push(MoveAction::Stay);
                continue;
            }
            let cell = state.positions[agent];
            let probs = belief.probs(slot);
            let policies = belief.hypothesis_set().policies();
            let mut mean = [0.0f64; 5];
            for _ in 0..self.cfg.select_samples {
                let h = draw_index(probs, self.rng);
                let dist = policies[h].action_dist(map, cell);
                for (m, d) in mean.iter_mut().zip(dist) {
                    *m += d;
                }
            }
            let total: f64 = mean.iter().sum();
            for m in mean.iter_mut() {
                *m /= total;
            }
            let intended = MoveAction::ALL[draw_index(&mean, self.rng)];
            let landed = map.resolve(cell, intended);
            joint.push(MoveAction::between(cell, landed).expect("resolve keeps unit moves"));
        }
        joint
    }

    /// Exploration-balanced pick among a decision node's expectation
    /// children. First maximum wins, in move order.
    fn balanced_choice(&self, node: usize) -> usize {
        let n_par = self.arena[node].n as f64;
        let NodeKind::Max { children, .. } = &self.arena[node].kind else { unreachable!() };
        let mut best = f64::NEG_INFINITY;
        let mut pick = 0;
        for (i, child) in children.iter().enumerate() {
            let id = child.expect("balanced choice runs on fully expanded nodes");
            let c = &self.arena[id];
            let mean = c.v / c.n as f64;
            let stretch = (n_par.ln() / c.n as f64).sqrt();
            let bonus = match self.cfg.selection {
                SelectionRule::Uct { c } => c * stretch,
                SelectionRule::Puct { c1, c2 } => {
                    self.arena[node].prior[i] * stretch * (c1 + ((n_par + c2) / c2).ln())
                }
                SelectionRule::None => 0.0,
            };
            let score = mean + bonus;
            if score > best {
                best = score;
                pick = id;
            }
        }
        pick
    }

    fn evaluate(&mut self, id: usize) {
        if self.arena[id].evaluated {
            debug_assert!(self.arena[id].terminal, "only terminal nodes are re-visited");
            self.arena[id].n += 1;
            return;
        }
        if self.arena[id].terminal {
            // The edge reward already carries the outcome; nothing
            // follows an absorbing state.
            self.arena[id].v = 0.0;
            self.arena[id].prior = [0.2; 5];
        } else {
            let node = &self.arena[id];
            let (v, scores) =
                self.evaluator.evaluate(self.model, &node.state, &node.belief, self.rng);
            self.arena[id].v = v;
            self.arena[id].prior = prior_from_scores(&scores);
        }
        self.arena[id].evaluated = true;
        self.arena[id].n = 1;
    }

    fn backup(&mut self, id: usize) {
        let mut g = self.arena[id].v;
        let mut cur = id;
        loop {
            if matches!(self.arena[cur].kind, NodeKind::Max { .. }) {
                g = self.arena[cur].reward + self.model.gamma * g;
            }
            match self.arena[cur].parent {
                Some(p) => {
                    self.arena[p].v += g;
                    self.arena[p].n += 1;
                    cur = p;
                }
                None => break,
            }
        }
    }

    /// Most-visited root action, if the budget got far enough to grow
    /// any root children at all.
    fn best_action(&self) -> Option<MoveAction> {
        let NodeKind::Max { children, .. } = &self.arena[0].kind else { unreachable!() };
        let mut best: Option<(u32, MoveAction)> = None;
        for (i, child) in children.iter().enumerate() {
            let Some(id) = child else { continue };
            let n = self.arena[*id].n;
            if best.map_or(true, |(bn, _)| n > bn) {
                best = Some((n, MoveAction::ALL[i]));
            }
        }
        best.map(|(_, a)| a)
    }
}

/// Shifted, normalized action scores; a flat or degenerate vector
/// becomes the uniform prior.
fn prior_from_scores(scores: &[f64; 5]) -> [f64; 5] {
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut prior = [0.0; 5];
    let mut total = 0.0;
    for (p, &s) in prior.iter_mut().zip(scores) {
        *p = s - min;
        total += *p;
    }
    if total <= 0.0 || !total.is_finite() {
        return [0.2; 5];
    }
    for p in prior.iter_mut() {
        *p /= total;
    }
    prior
}

fn joint_code(joint: &[MoveAction]) -> u64 {
    joint.iter().fold(0u64, |code, action| code * 5 + action.index() as u64)
}

/// One weighted index draw; scans in index order so the RNG stream is
/// consumed identically across runs.
fn draw_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last = i;
        acc += w;
        if u < acc {
            return i;
        }
    }
    last
}

pub struct MctsPlanner {
    base: PlannerBase,
    cfg: TsConfig,
    evaluator: Evaluator,
}

impl MctsPlanner {
    pub fn new(view: &PlannerView, cfg: TsConfig) -> Result<Self, PlannerError> {
        let base = PlannerBase::new(view)?;
        let evaluator = Evaluator::build(cfg.eval, view, &base.model, &base.belief)?;
        Ok(MctsPlanner { base, cfg, evaluator })
    }
}

impl Planner for MctsPlanner {
    fn reset(&mut self) {
        self.base.reset();
    }

    fn act(&mut self, state: &JointState) -> MoveAction {
        let state = self.base.model.observe_state(state);
        if self.base.model.is_terminal(&state) {
            return MoveAction::Stay;
        }
        let mut tree = Tree::new(
            &self.base.model,
            &self.cfg,
            &mut self.evaluator,
            &mut self.base.rng,
            state.clone(),
            Arc::new(self.base.belief.clone()),
        );
        for _ in 0..self.cfg.budget {
            let leaf = tree.select_and_expand();
            tree.evaluate(leaf);
            tree.backup(leaf);
        }
        match tree.best_action() {
            Some(action) => action,
            None => self.base.safe_fallback(&state, "no iterations got past the root"),
        }
    }

    fn observe(&mut self, state: &JointState, actions: &[MoveAction]) {
        self.base.observe_update(state, actions);
    }

    fn fallbacks(&self) -> u32 {
        self.base.fallbacks
    }
}

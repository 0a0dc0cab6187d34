//! Belief-induced MDP compilation and exact solving.
//!
//! The modelling agent folds its opponents into the environment: under a
//! frozen belief, opponent joint actions marginalize into a row-stochastic
//! transition function over joint states, giving an ordinary single-agent
//! MDP. This module compiles that MDP ([`induce_mdp`]), solves it by
//! synchronous value iteration ([`value_iteration`]), solves one MDP per
//! opponent hypothesis combination ([`solve_context_mdps`]), and mixes the
//! per-context Q-tables by the running belief ([`qmdp_action`]).
//!
//! Induced states ignore opponent arrived flags: the compiled dynamics move
//! opponents by their hypothesis policies, which already park them on their
//! hypothesized goals. [`InducedMdp::lookup`] projects observed states onto
//! the compiled flag pattern so tables solved at reset stay usable after an
//! opponent parks mid-episode.

use std::collections::HashMap;
use std::fmt::Write as _;

use num_bigint::BigUint;
use thiserror::Error;

use crate::belief::{joint_action_dist, Belief};
use crate::env::{state_count, JointState, MoveAction};
use crate::model::AgentModel;

pub const DEFAULT_STATE_CAP: usize = 100_000;
pub const DEFAULT_VI_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("joint state space has {count} states, above the cap of {cap}")]
    StateCap { count: BigUint, cap: usize },
    #[error("{count} opponent contexts, above the cap of {cap}")]
    ContextCap { count: usize, cap: usize },
    #[error("state {0} is not covered by the solved tables")]
    UnknownState(String),
    #[error("no context tables given")]
    NoContexts,
}

/// A finite MDP in sparse row form. Terminal states are encoded
/// structurally as reward-0 self-loops, so no operation special-cases
/// them; the `terminal` flags only annotate.
#[derive(Debug, Clone)]
pub struct Mdp {
    /// `transitions[s][a]` lists `(next_state, probability)` pairs.
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
    /// Expected immediate reward per (state, action).
    pub rewards: Vec<Vec<f64>>,
    pub terminal: Vec<bool>,
    pub gamma: f64,
}

impl Mdp {
    pub fn n_states(&self) -> usize {
        self.transitions.len()
    }

    pub fn n_actions(&self) -> usize {
        self.transitions.first().map_or(0, Vec::len)
    }

    /// Largest deviation of any transition row sum from 1.
    pub fn max_row_sum_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for rows in &self.transitions {
            for row in rows {
                let sum: f64 = row.iter().map(|&(_, p)| p).sum();
                worst = worst.max((sum - 1.0).abs());
            }
        }
        worst
    }

    /// Plain-text sparse dump: `T s a s' p` and `R s a r` lines.
    pub fn to_triplet_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "states {} actions {} gamma {}", self.n_states(), self.n_actions(), self.gamma)
            .unwrap();
        for (s, rows) in self.transitions.iter().enumerate() {
            for (a, row) in rows.iter().enumerate() {
                for &(next, p) in row {
                    writeln!(out, "T {s} {a} {next} {p}").unwrap();
                }
            }
        }
        for (s, row) in self.rewards.iter().enumerate() {
            for (a, &r) in row.iter().enumerate() {
                if r != 0.0 {
                    writeln!(out, "R {s} {a} {r}").unwrap();
                }
            }
        }
        out
    }
}

/// One synchronous Bellman backup of `values`.
pub fn bellman_backup(mdp: &Mdp, values: &[f64]) -> Vec<f64> {
    let mut next = vec![0.0; mdp.n_states()];
    for s in 0..mdp.n_states() {
        let mut best = f64::NEG_INFINITY;
        for a in 0..mdp.transitions[s].len() {
            let mut q = mdp.rewards[s][a];
            for &(t, p) in &mdp.transitions[s][a] {
                q += mdp.gamma * p * values[t];
            }
            best = best.max(q);
        }
        next[s] = if best == f64::NEG_INFINITY { 0.0 } else { best };
    }
    next
}

#[derive(Debug, Clone)]
pub struct ValueSolution {
    pub values: Vec<f64>,
    /// `q[s][a]`, same action indexing as the MDP.
    pub q: Vec<Vec<f64>>,
    /// Greedy action per state, first maximizer wins.
    pub policy: Vec<usize>,
}

/// Synchronous value iteration from the zero vector until the sup-norm
/// residual drops below `tol`. Discounting guarantees termination.
pub fn value_iteration(mdp: &Mdp, tol: f64) -> ValueSolution {
    assert!(tol > 0.0, "tolerance must be positive");
    let mut values = vec![0.0; mdp.n_states()];
    loop {
        let next = bellman_backup(mdp, &values);
        let residual = values
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        values = next;
        if residual < tol {
            break;
        }
    }
    let q: Vec<Vec<f64>> = (0..mdp.n_states())
        .map(|s| {
            (0..mdp.transitions[s].len())
                .map(|a| {
                    let mut q = mdp.rewards[s][a];
                    for &(t, p) in &mdp.transitions[s][a] {
                        q += mdp.gamma * p * values[t];
                    }
                    q
                })
                .collect()
        })
        .collect();
    let policy = q.iter().map(|row| argmax_first(row)).collect();
    ValueSolution { values, q, policy }
}

fn argmax_first(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// A belief-induced MDP over joint states reachable from one root.
///
/// Index 0 is the root. Collisions aggregate into one synthetic sink
/// (`states` entry `None`); own-goal arrivals stay as real terminal
/// states. Actions are the five own moves in tie-break order.
#[derive(Debug, Clone)]
pub struct InducedMdp {
    pub mdp: Mdp,
    /// Dense index to state; `None` marks the collision sink.
    pub states: Vec<Option<JointState>>,
    index: HashMap<JointState, usize>,
    /// Opponent arrived flags shared by every compiled state.
    flag_pattern: Vec<bool>,
    own_index: usize,
}

impl InducedMdp {
    pub fn root(&self) -> usize {
        0
    }

    /// Finds the compiled index of a state, projecting opponent arrived
    /// flags onto the pattern the MDP was compiled with.
    pub fn lookup(&self, state: &JointState) -> Option<usize> {
        if let Some(&i) = self.index.get(state) {
            return Some(i);
        }
        let mut projected = state.clone();
        for i in 0..projected.arrived.len() {
            if i != self.own_index {
                projected.arrived[i] = self.flag_pattern[i];
            }
        }
        self.index.get(&projected).copied()
    }
}

/// Compiles the belief-induced MDP reachable from `from`.
///
/// Transitions marginalize opponent actions through the belief-mean
/// joint policy evaluated at each state; the belief weights themselves
/// stay frozen. Fails if the whole-map joint state count exceeds `cap`,
/// and again if live enumeration does.
pub fn induce_mdp(
    model: &AgentModel,
    belief: &Belief,
    from: &JointState,
    cap: usize,
) -> Result<InducedMdp, SolverError> {
    let a_priori = state_count(model.map.empty_cells(), from.len());
    if a_priori > BigUint::from(cap) {
        return Err(SolverError::StateCap { count: a_priori, cap });
    }

    let root = model.observe_state(from);
    let opponents = belief.opponents().to_vec();
    let flag_pattern = root.arrived.clone();

    let mut states: Vec<Option<JointState>> = vec![Some(root.clone())];
    let mut index = HashMap::from([(root, 0usize)]);
    let mut transitions: Vec<Vec<Vec<(usize, f64)>>> = Vec::new();
    let mut rewards: Vec<Vec<f64>> = Vec::new();
    let mut terminal: Vec<bool> = Vec::new();
    let mut sink: Option<usize> = None;

    let mut cursor = 0;
    while cursor < states.len() {
        let state = match states[cursor].clone() {
            Some(s) => s,
            None => {
                // The collision sink was enqueued; fill a self-loop row.
                transitions.push(vec![vec![(cursor, 1.0)]; MoveAction::ALL.len()]);
                rewards.push(vec![0.0; MoveAction::ALL.len()]);
                terminal.push(true);
                cursor += 1;
                continue;
            }
        };
        if model.is_terminal(&state) {
            transitions.push(vec![vec![(cursor, 1.0)]; MoveAction::ALL.len()]);
            rewards.push(vec![0.0; MoveAction::ALL.len()]);
            terminal.push(true);
            cursor += 1;
            continue;
        }

        let joint = joint_action_dist(belief, &state);
        let combos = joint.enumerate();
        let mut state_rows = Vec::with_capacity(MoveAction::ALL.len());
        let mut state_rewards = Vec::with_capacity(MoveAction::ALL.len());
        for own in MoveAction::ALL {
            let mut row: HashMap<usize, f64> = HashMap::new();
            let mut reward = 0.0;
            for (opp_actions, p) in &combos {
                let out = model.step(&state, own, &opponents, opp_actions);
                reward += p * out.reward;
                let target = if out.collided {
                    *sink.get_or_insert_with(|| {
                        states.push(None);
                        states.len() - 1
                    })
                } else {
                    *index.entry(out.next.clone()).or_insert_with(|| {
                        states.push(Some(out.next));
                        states.len() - 1
                    })
                };
                *row.entry(target).or_insert(0.0) += p;
            }
            if states.len() > cap {
                return Err(SolverError::StateCap { count: states.len().into(), cap });
            }
            let mut row: Vec<(usize, f64)> = row.into_iter().collect();
            row.sort_unstable_by_key(|&(t, _)| t);
            state_rows.push(row);
            state_rewards.push(reward);
        }
        transitions.push(state_rows);
        rewards.push(state_rewards);
        terminal.push(false);
        cursor += 1;
    }

    Ok(InducedMdp {
        mdp: Mdp { transitions, rewards, terminal, gamma: model.gamma },
        states,
        index,
        flag_pattern,
        own_index: model.own_index,
    })
}

/// An induced MDP together with its value-iteration solution.
#[derive(Debug, Clone)]
pub struct InducedSolution {
    pub mdp: InducedMdp,
    pub solution: ValueSolution,
}

impl InducedSolution {
    pub fn greedy_action(&self, state: &JointState) -> Option<MoveAction> {
        let s = self.mdp.lookup(state)?;
        Some(MoveAction::ALL[self.solution.policy[s]])
    }

    pub fn root_value(&self) -> f64 {
        self.solution.values[self.mdp.root()]
    }
}

pub fn solve_induced(
    model: &AgentModel,
    belief: &Belief,
    from: &JointState,
    cap: usize,
    tol: f64,
) -> Result<InducedSolution, SolverError> {
    let mdp = induce_mdp(model, belief, from, cap)?;
    let solution = value_iteration(&mdp.mdp, tol);
    Ok(InducedSolution { mdp, solution })
}

/// Per-context Q-tables: one solved MDP per combination of opponent
/// hypotheses.
#[derive(Debug, Clone)]
pub struct ContextTables {
    /// Hypothesis index per opponent slot, mixed-radix ascending.
    pub contexts: Vec<Vec<usize>>,
    pub tables: Vec<InducedSolution>,
}

pub const DEFAULT_CONTEXT_CAP: usize = 4096;

/// Solves the point-mass induced MDP for every opponent hypothesis
/// combination of `belief`'s hypothesis set.
pub fn solve_context_mdps(
    model: &AgentModel,
    belief: &Belief,
    from: &JointState,
    context_cap: usize,
    state_cap: usize,
    tol: f64,
) -> Result<ContextTables, SolverError> {
    let slots = belief.opponents().len();
    let k = belief.hypothesis_set().len();
    let count = k.checked_pow(slots as u32).filter(|&c| c > 0).unwrap_or(usize::MAX);
    if count > context_cap {
        return Err(SolverError::ContextCap { count, cap: context_cap });
    }

    let mut contexts = Vec::with_capacity(count);
    let mut assignment = vec![0usize; slots];
    loop {
        contexts.push(assignment.clone());
        let mut slot = slots;
        loop {
            if slot == 0 {
                break;
            }
            slot -= 1;
            assignment[slot] += 1;
            if assignment[slot] < k {
                break;
            }
            assignment[slot] = 0;
        }
        if assignment.iter().all(|&h| h == 0) {
            break;
        }
    }

    let tables = contexts
        .iter()
        .map(|ctx| solve_induced(model, &belief.point_mass(ctx), from, state_cap, tol))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ContextTables { contexts, tables })
}

impl ContextTables {
    /// Belief weight of a context: product of per-slot hypothesis masses.
    pub fn context_weight(&self, belief: &Belief, context: &[usize]) -> f64 {
        context
            .iter()
            .enumerate()
            .map(|(slot, &h)| belief.probs(slot)[h])
            .product()
    }

    /// Belief-mixed Q-values over the five own actions at `state`.
    pub fn mixed_q(&self, state: &JointState, belief: &Belief) -> Result<[f64; 5], SolverError> {
        if self.tables.is_empty() {
            return Err(SolverError::NoContexts);
        }
        let mut scores = [0.0f64; 5];
        for (ctx, table) in self.contexts.iter().zip(&self.tables) {
            let w = self.context_weight(belief, ctx);
            if w == 0.0 {
                continue;
            }
            let s = table
                .mdp
                .lookup(state)
                .ok_or_else(|| SolverError::UnknownState(format!("{:?}", state.positions)))?;
            for (a, score) in scores.iter_mut().enumerate() {
                *score += w * table.solution.q[s][a];
            }
        }
        Ok(scores)
    }
}

/// The QMDP rule: argmax over own actions of the belief-weighted sum of
/// per-context Q-values, ties broken in move order.
pub fn qmdp_action(
    state: &JointState,
    belief: &Belief,
    tables: &ContextTables,
) -> Result<MoveAction, SolverError> {
    let scores = tables.mixed_q(state, belief)?;
    Ok(MoveAction::ALL[argmax_first(&scores)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::init_belief;
    use crate::env::{Cell, GridMap};
    use std::sync::Arc;

    fn two_state_chain(gamma: f64) -> Mdp {
        // s0 -(a0, reward 1)-> terminal s1; a1 self-loops with reward 0.
        Mdp {
            transitions: vec![
                vec![vec![(1, 1.0)], vec![(0, 1.0)]],
                vec![vec![(1, 1.0)], vec![(1, 1.0)]],
            ],
            rewards: vec![vec![1.0, 0.0], vec![0.0, 0.0]],
            terminal: vec![false, true],
            gamma,
        }
    }

    #[test]
    fn chain_value_is_one_step_reward() {
        let sol = value_iteration(&two_state_chain(0.95), 1e-9);
        assert!((sol.values[0] - 1.0).abs() < 1e-8);
        assert_eq!(sol.values[1], 0.0);
        assert_eq!(sol.policy[0], 0);
    }

    #[test]
    fn terminal_self_loop_stays_zero() {
        let mdp = two_state_chain(0.95);
        let v = bellman_backup(&mdp, &[5.0, 0.0]);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn reward_shift_leaves_policy_unchanged() {
        // On an MDP with no absorbing states, adding c to every reward
        // shifts V uniformly by c/(1-gamma) and keeps the argmax sets.
        let mut mdp = Mdp {
            transitions: vec![
                vec![vec![(1, 1.0)], vec![(0, 0.5), (1, 0.5)]],
                vec![vec![(0, 1.0)], vec![(1, 1.0)]],
            ],
            rewards: vec![vec![0.3, 0.9], vec![0.5, 0.1]],
            terminal: vec![false, false],
            gamma: 0.9,
        };
        let base = value_iteration(&mdp, 1e-10);
        for row in mdp.rewards.iter_mut() {
            for r in row.iter_mut() {
                *r += 2.0;
            }
        }
        let shifted = value_iteration(&mdp, 1e-10);
        assert_eq!(base.policy, shifted.policy);
        for (b, s) in base.values.iter().zip(&shifted.values) {
            assert!((s - b - 2.0 / (1.0 - 0.9)).abs() < 1e-6);
        }
    }

    fn tiny_setup() -> (AgentModel, Belief, JointState) {
        let map = Arc::new(GridMap::open(3, 3));
        let model = AgentModel::new(map.clone(), 0, Cell::new(2, 2));
        let belief = init_belief(&map, &[1], Cell::new(2, 2), 0.1, false);
        let state = JointState::new(vec![Cell::new(0, 0), Cell::new(2, 0)]);
        (model, belief, state)
    }

    #[test]
    fn induced_rows_are_stochastic() {
        let (model, belief, state) = tiny_setup();
        let induced = induce_mdp(&model, &belief, &state, DEFAULT_STATE_CAP).unwrap();
        assert!(induced.mdp.max_row_sum_error() < 1e-9);
        assert!(induced.mdp.n_states() > 1);
    }

    #[test]
    fn deterministic_hypothesis_gives_unit_rows() {
        // A single epsilon-0 hypothesis moves the opponent deterministically,
        // so every transition row from a live state has one unit entry.
        let map = Arc::new(GridMap::open(3, 3));
        let model = AgentModel::new(map.clone(), 0, Cell::new(2, 2));
        let belief = init_belief(&map, &[1], Cell::new(2, 2), 0.0, false)
            .point_mass(&[0]);
        let state = JointState::new(vec![Cell::new(0, 0), Cell::new(2, 0)]);
        let induced = induce_mdp(&model, &belief, &state, DEFAULT_STATE_CAP).unwrap();
        for (s, rows) in induced.mdp.transitions.iter().enumerate() {
            if induced.mdp.terminal[s] {
                continue;
            }
            for row in rows {
                assert_eq!(row.len(), 1, "state {s} row {row:?}");
                assert!((row[0].1 - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn induced_cap_triggers() {
        let (model, belief, state) = tiny_setup();
        let err = induce_mdp(&model, &belief, &state, 10).unwrap_err();
        assert!(matches!(err, SolverError::StateCap { .. }));
    }

    #[test]
    fn solved_tiny_agent_heads_to_goal() {
        let (model, belief, state) = tiny_setup();
        let solved = solve_induced(&model, &belief, &state, DEFAULT_STATE_CAP, 1e-6).unwrap();
        let action = solved.greedy_action(&state).unwrap();
        // From (0,0) to (2,2): Down or Right both shorten; Down wins ties.
        assert!(matches!(action, MoveAction::Down | MoveAction::Right));
        assert!(solved.root_value() > 0.0);
    }

    #[test]
    fn lookup_projects_opponent_flags() {
        let (model, belief, state) = tiny_setup();
        let induced = induce_mdp(&model, &belief, &state, DEFAULT_STATE_CAP).unwrap();
        let mut flagged = state.clone();
        flagged.arrived[1] = true;
        assert_eq!(induced.lookup(&flagged), Some(0));
    }

    #[test]
    fn context_tables_match_point_mass_solves() {
        let (model, belief, state) = tiny_setup();
        let tables =
            solve_context_mdps(&model, &belief, &state, 64, DEFAULT_STATE_CAP, 1e-6).unwrap();
        assert_eq!(tables.contexts.len(), belief.hypothesis_set().len());
        let direct =
            solve_induced(&model, &belief.point_mass(&[3]), &state, DEFAULT_STATE_CAP, 1e-6)
                .unwrap();
        let idx = tables.contexts.iter().position(|c| c == &[3]).unwrap();
        assert_eq!(tables.tables[idx].root_value(), direct.root_value());
    }

    #[test]
    fn qmdp_point_mass_matches_greedy() {
        let (model, belief, state) = tiny_setup();
        let tables =
            solve_context_mdps(&model, &belief, &state, 64, DEFAULT_STATE_CAP, 1e-6).unwrap();
        let point = belief.point_mass(&[2]);
        let direct = tables.tables[2].greedy_action(&state).unwrap();
        assert_eq!(qmdp_action(&state, &point, &tables).unwrap(), direct);
    }

    #[test]
    fn context_cap_triggers() {
        let (model, belief, state) = tiny_setup();
        let err = solve_context_mdps(&model, &belief, &state, 3, DEFAULT_STATE_CAP, 1e-6)
            .unwrap_err();
        assert!(matches!(err, SolverError::ContextCap { .. }));
    }
}

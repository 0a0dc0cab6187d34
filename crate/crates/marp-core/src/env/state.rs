//! Joint states and the simultaneous-move transition.
//!
//! All agents pick one move each; moves resolve at once. A move off the
//! grid or into an obstacle resolves to `Stay`, and an agent flagged
//! arrived is forced to `Stay` outright. Two kinds of collision are
//! registered: vertex (two agents land on the same cell) and swap (two
//! agents exchange cells). Colliding agents still occupy their intended
//! cells in the returned state; deciding whether a collision ends an
//! episode is the caller's business.

use serde::{Deserialize, Serialize};

use super::grid::{Cell, GridMap, MoveAction};

/// Positions and arrived flags for all agents, indexed consistently with
/// the owning scenario.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointState {
    pub positions: Vec<Cell>,
    pub arrived: Vec<bool>,
}

impl JointState {
    pub fn new(positions: Vec<Cell>) -> Self {
        let n = positions.len();
        JointState { positions, arrived: vec![false; n] }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Optional rule switches for the transition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRules {
    /// When set, agents that have already arrived stop being physical:
    /// nobody can vertex-collide with them. Off by default, so a parked
    /// agent keeps blocking its cell.
    pub goal_ghosting: bool,
}

/// One simultaneous step with full knowledge of every agent's goal.
/// Returns the successor state and all colliding pairs `(i, j)`, `i < j`.
pub fn step(
    map: &GridMap,
    goals: &[Cell],
    state: &JointState,
    actions: &[MoveAction],
) -> (JointState, Vec<(usize, usize)>) {
    let goals: Vec<Option<Cell>> = goals.iter().copied().map(Some).collect();
    step_with(StepRules::default(), map, &goals, state, actions)
}

/// Transition kernel shared by the environment and by planner-side
/// models. Goals may be unknown (`None`), in which case the arrived flag
/// for that agent is simply carried over; this is how a planner models
/// opponents whose goals it cannot see.
pub fn step_with(
    rules: StepRules,
    map: &GridMap,
    goals: &[Option<Cell>],
    state: &JointState,
    actions: &[MoveAction],
) -> (JointState, Vec<(usize, usize)>) {
    let n = state.len();
    assert_eq!(actions.len(), n, "one action per agent");
    assert_eq!(goals.len(), n, "one goal slot per agent");

    let mut next = Vec::with_capacity(n);
    for i in 0..n {
        if state.arrived[i] {
            next.push(state.positions[i]);
        } else {
            next.push(map.resolve(state.positions[i], actions[i]));
        }
    }

    let mut collisions = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rules.goal_ghosting && (state.arrived[i] || state.arrived[j]) {
                continue;
            }
            let vertex = next[i] == next[j];
            let swap = state.positions[i] != state.positions[j]
                && next[i] == state.positions[j]
                && next[j] == state.positions[i];
            if vertex || swap {
                collisions.push((i, j));
            }
        }
    }

    let mut arrived = state.arrived.clone();
    for i in 0..n {
        if let Some(goal) = goals[i] {
            if next[i] == goal {
                arrived[i] = true;
            }
        }
    }

    (JointState { positions: next, arrived }, collisions)
}

//! The modelling agent's private view of the stage game.
//!
//! A planner knows the map, its own index and goal, and the reward
//! scheme — but not the opponents' goals. Model transitions therefore
//! move opponents by whatever actions the belief machinery supplies and
//! never set their arrived flags; the agent's own arrival and any
//! collision touching the agent terminate the modelled episode.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{Cell, GridMap, JointState, MoveAction};

/// Stage rewards for the modelling agent. Collision ends the episode
/// with the penalty; arrival ends it with the goal reward; everything
/// else pays the per-step reward. Discounting does the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub goal_reward: f64,
    pub collision_penalty: f64,
    pub step_reward: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams { goal_reward: 1.0, collision_penalty: -1.0, step_reward: 0.0 }
    }
}

pub const DEFAULT_GAMMA: f64 = 0.95;

/// Immutable per-episode model context.
#[derive(Debug, Clone)]
pub struct AgentModel {
    pub map: Arc<GridMap>,
    pub own_index: usize,
    pub own_goal: Cell,
    pub rewards: RewardParams,
    pub gamma: f64,
}

/// Result of one modelled joint step.
#[derive(Debug, Clone)]
pub struct ModelOutcome {
    pub next: JointState,
    pub reward: f64,
    pub collided: bool,
    pub terminal: bool,
}

impl AgentModel {
    pub fn new(map: Arc<GridMap>, own_index: usize, own_goal: Cell) -> Self {
        AgentModel {
            map,
            own_index,
            own_goal,
            rewards: RewardParams::default(),
            gamma: DEFAULT_GAMMA,
        }
    }

    /// Normalizes an environment state into the model's frame. Arrived
    /// flags count as observable (a parked agent is announced done, and
    /// the oracle treats such agents as obstacles); the own flag is
    /// additionally rederived from the known goal so that a start-on-goal
    /// state reads as terminal.
    pub fn observe_state(&self, state: &JointState) -> JointState {
        let mut out = state.clone();
        let me = self.own_index;
        out.arrived[me] = state.arrived[me] || state.positions[me] == self.own_goal;
        out
    }

    pub fn is_terminal(&self, state: &JointState) -> bool {
        state.arrived[self.own_index]
    }

    /// One modelled step. `opponent_actions` is aligned with
    /// `opponent_indices` (every agent except the own index, ascending).
    pub fn step(
        &self,
        state: &JointState,
        own_action: MoveAction,
        opponent_indices: &[usize],
        opponent_actions: &[MoveAction],
    ) -> ModelOutcome {
        debug_assert!(!self.is_terminal(state), "stepping a terminal model state");
        let n = state.len();
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            if state.arrived[i] {
                next.push(state.positions[i]);
            } else {
                let action = if i == self.own_index {
                    own_action
                } else {
                    let slot = opponent_indices
                        .iter()
                        .position(|&j| j == i)
                        .expect("every other agent has an opponent slot");
                    opponent_actions[slot]
                };
                next.push(self.map.resolve(state.positions[i], action));
            }
        }

        let me = self.own_index;
        let own_pos = state.positions[me];
        let own_next = next[me];
        let collided = (0..n).any(|j| {
            j != me
                && (next[j] == own_next
                    || (state.positions[j] != own_pos
                        && next[j] == own_pos
                        && own_next == state.positions[j]))
        });

        let mut arrived = state.arrived.clone();
        let reached_goal = own_next == self.own_goal;
        if reached_goal {
            arrived[me] = true;
        }

        let reward = if collided {
            self.rewards.collision_penalty
        } else if reached_goal {
            self.rewards.goal_reward
        } else {
            self.rewards.step_reward
        };

        ModelOutcome {
            next: JointState { positions: next, arrived },
            reward,
            collided,
            terminal: collided || reached_goal,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> AgentModel {
        AgentModel::new(Arc::new(GridMap::open(3, 3)), 0, Cell::new(0, 2))
    }

    #[test]
    fn goal_entry_pays_goal_reward_and_terminates() {
        let m = model();
        let state = JointState::new(vec![Cell::new(0, 1), Cell::new(2, 2)]);
        let out = m.step(&state, MoveAction::Right, &[1], &[MoveAction::Stay]);
        assert!(out.terminal && !out.collided);
        assert_eq!(out.reward, 1.0);
        assert!(out.next.arrived[0]);
    }

    #[test]
    fn collision_with_opponent_pays_penalty() {
        let m = model();
        let state = JointState::new(vec![Cell::new(1, 0), Cell::new(1, 2)]);
        let out = m.step(&state, MoveAction::Right, &[1], &[MoveAction::Left]);
        assert!(out.collided && out.terminal);
        assert_eq!(out.reward, -1.0);
    }

    #[test]
    fn collision_wins_over_simultaneous_arrival() {
        let m = model();
        // Own move reaches the goal cell while the opponent enters it too.
        let state = JointState::new(vec![Cell::new(0, 1), Cell::new(1, 2)]);
        let out = m.step(&state, MoveAction::Right, &[1], &[MoveAction::Up]);
        assert!(out.collided);
        assert_eq!(out.reward, -1.0);
    }

    #[test]
    fn opponent_arrival_flags_are_never_set_by_the_model() {
        let m = model();
        let state = JointState::new(vec![Cell::new(2, 0), Cell::new(1, 1)]);
        let out = m.step(&state, MoveAction::Stay, &[1], &[MoveAction::Down]);
        assert!(!out.next.arrived[1]);
    }

    #[test]
    fn observe_state_rederives_own_flag_and_keeps_opponent_flags() {
        let m = model();
        let mut state = JointState::new(vec![Cell::new(0, 2), Cell::new(1, 1)]);
        state.arrived[1] = true;
        let seen = m.observe_state(&state);
        assert!(seen.arrived[0], "own position equals own goal");
        assert!(seen.arrived[1]);
    }
}

//! The safe-action rule shared by the Safe/EnhancedSafe planners and
//! the scripted safe opponent.
//!
//! An own action is unsafe when some other agent has a single valid
//! move that produces a vertex or swap collision with it. Among safe
//! actions the rule picks the one minimizing the distance-to-goal of
//! the landing cell. When nothing is safe it minimizes the one-step
//! collision probability under the supplied per-agent move models.

use crate::env::{Cell, DistanceField, GridMap, JointState, MoveAction};

/// Another agent as seen by the rule: its index in the joint state and
/// a move distribution used only for the no-safe-action corner.
#[derive(Debug, Clone)]
pub struct OtherMover {
    pub index: usize,
    pub move_dist: [f64; 5],
}

/// Uniform-over-valid-moves models for every agent except `self_index`.
pub fn uniform_move_dists(map: &GridMap, state: &JointState, self_index: usize) -> Vec<OtherMover> {
    (0..state.len())
        .filter(|&j| j != self_index)
        .map(|j| {
            let mut dist = [0.0; 5];
            let mut n = 0usize;
            for action in MoveAction::ALL {
                if map.neighbor(state.positions[j], action).is_some() {
                    n += 1;
                }
            }
            for action in MoveAction::ALL {
                if map.neighbor(state.positions[j], action).is_some() {
                    dist[action.index()] = 1.0 / n as f64;
                }
            }
            OtherMover { index: j, move_dist: dist }
        })
        .collect()
}

fn collides(own_pos: Cell, own_next: Cell, other_pos: Cell, other_next: Cell) -> bool {
    let vertex = own_next == other_next;
    let swap = own_pos != other_pos && own_next == other_pos && other_next == own_pos;
    vertex || swap
}

/// True when some single valid move of `other` collides with landing on
/// `own_next`.
fn unsafe_against(map: &GridMap, own_pos: Cell, own_next: Cell, other_pos: Cell) -> bool {
    MoveAction::ALL
        .into_iter()
        .any(|a| collides(own_pos, own_next, other_pos, map.resolve(other_pos, a)))
}

/// Safe-rule move for `self_index`. `field` scores landing cells by
/// distance to this agent's goal; `others` lists the agents considered
/// potential colliders (EnhancedSafe passes a reduced list).
pub fn safe_move(
    map: &GridMap,
    state: &JointState,
    self_index: usize,
    field: &DistanceField,
    others: &[OtherMover],
) -> MoveAction {
    let own_pos = state.positions[self_index];
    let candidates: Vec<(MoveAction, Cell)> = MoveAction::ALL
        .into_iter()
        .filter_map(|a| map.neighbor(own_pos, a).map(|next| (a, next)))
        .collect();

    let mut best: Option<(MoveAction, u32)> = None;
    let mut stay_safe = false;
    for &(action, next) in &candidates {
        let safe = !others
            .iter()
            .any(|o| unsafe_against(map, own_pos, next, state.positions[o.index]));
        if !safe {
            continue;
        }
        if action == MoveAction::Stay {
            stay_safe = true;
        }
        let d = field.get(next);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((action, d));
        }
    }

    match best {
        // All reachable safe cells are cut off from the goal: parking
        // beats wandering, so prefer Stay when it is itself safe.
        Some((_, d)) if d == DistanceField::INFINITE && stay_safe => MoveAction::Stay,
        Some((action, _)) => action,
        None => least_risky_move(map, state, self_index, &candidates, others),
    }
}

/// No action is safe: minimize the probability that any other agent's
/// sampled move collides with ours.
fn least_risky_move(
    map: &GridMap,
    state: &JointState,
    self_index: usize,
    candidates: &[(MoveAction, Cell)],
    others: &[OtherMover],
) -> MoveAction {
    let own_pos = state.positions[self_index];
    let mut best = (MoveAction::Stay, f64::INFINITY);
    for &(action, next) in candidates {
        let mut p_clear = 1.0;
        for o in others {
            let other_pos = state.positions[o.index];
            let mut q = 0.0;
            for a in MoveAction::ALL {
                if collides(own_pos, next, other_pos, map.resolve(other_pos, a)) {
                    q += o.move_dist[a.index()];
                }
            }
            p_clear *= 1.0 - q.min(1.0);
        }
        let p_collide = 1.0 - p_clear;
        if p_collide < best.1 {
            best = (action, p_collide);
        }
    }
    best.0
}

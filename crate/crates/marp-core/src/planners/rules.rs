//! The rule-based planners: plain shortest path, the safe rule, and the
//! enhanced safe rule that walls off opponents it has watched stand
//! still.

use std::sync::Arc;

use crate::belief::detect_stationary;
use crate::env::{bfs_distance, Cell, DistanceField, GridMap, JointState, MoveAction};
use crate::opponents::shortest_path_move;
use crate::safe_rule::safe_move;

use super::{Planner, PlannerBase, PlannerError, PlannerView};

/// Walks its own shortest path and ignores everybody else.
pub struct AstarPlanner {
    map: Arc<GridMap>,
    own_index: usize,
    field: DistanceField,
}

impl AstarPlanner {
    pub fn new(view: &PlannerView) -> Result<Self, PlannerError> {
        Ok(AstarPlanner {
            map: view.map.clone(),
            own_index: view.own_index,
            field: bfs_distance(&view.map, view.own_goal)?,
        })
    }
}

impl Planner for AstarPlanner {
    fn reset(&mut self) {}

    fn act(&mut self, state: &JointState) -> MoveAction {
        if state.arrived[self.own_index] {
            return MoveAction::Stay;
        }
        shortest_path_move(&self.map, &self.field, state.positions[self.own_index])
    }

    fn observe(&mut self, _state: &JointState, _actions: &[MoveAction]) {}

    fn fallbacks(&self) -> u32 {
        0
    }
}

/// Greedy descent on the own-goal distance over moves that no single
/// opponent step can turn into a collision, with opponent moves scored
/// by the running belief.
pub struct SafePlanner {
    base: PlannerBase,
}

impl SafePlanner {
    pub fn new(view: &PlannerView) -> Result<Self, PlannerError> {
        Ok(SafePlanner { base: PlannerBase::new(view)? })
    }
}

impl Planner for SafePlanner {
    fn reset(&mut self) {
        self.base.reset();
    }

    fn act(&mut self, state: &JointState) -> MoveAction {
        let state = self.base.model.observe_state(state);
        if self.base.model.is_terminal(&state) {
            return MoveAction::Stay;
        }
        let movers = self.base.belief_movers(&state);
        safe_move(&self.base.view.map, &state, self.base.view.own_index, &self.base.field, &movers)
    }

    fn observe(&mut self, state: &JointState, actions: &[MoveAction]) {
        self.base.observe_update(state, actions);
    }

    fn fallbacks(&self) -> u32 {
        0
    }
}

/// The safe rule plus a stationarity monitor: an opponent seen on the
/// same cell for `k` consecutive observations is treated as a parked
/// obstacle, removed from the mover set, and planned around.
pub struct EnhancedSafePlanner {
    base: PlannerBase,
    k: usize,
    /// Per-slot position histories, seeded with the initial state.
    histories: Vec<Vec<Cell>>,
}

impl EnhancedSafePlanner {
    pub fn new(view: &PlannerView, k: usize) -> Result<Self, PlannerError> {
        Ok(EnhancedSafePlanner { base: PlannerBase::new(view)?, k, histories: Vec::new() })
    }
}

impl Planner for EnhancedSafePlanner {
    fn reset(&mut self) {
        self.base.reset();
        self.histories.clear();
    }

    fn act(&mut self, state: &JointState) -> MoveAction {
        let state = self.base.model.observe_state(state);
        if self.base.model.is_terminal(&state) {
            return MoveAction::Stay;
        }
        let view = &self.base.view;
        let flagged = detect_stationary(&self.histories, self.k);
        if flagged.is_empty() {
            let movers = self.base.belief_movers(&state);
            return safe_move(&view.map, &state, view.own_index, &self.base.field, &movers);
        }

        // Wall off the parked opponents and re-aim at the goal through
        // what is left. The goal cell itself stays passable even if an
        // opponent squats on it, so the distance field keeps pointing
        // home and the safe rule handles the final approach.
        let walls: Vec<Cell> = flagged
            .iter()
            .map(|&slot| state.positions[view.opponent_indices[slot]])
            .filter(|&cell| cell != view.own_goal)
            .collect();
        let masked = view.map.with_obstacles(&walls);
        let field = match bfs_distance(&masked, view.own_goal) {
            Ok(field) => field,
            Err(_) => return MoveAction::Stay,
        };
        let movers: Vec<_> = self
            .base
            .belief_movers(&state)
            .into_iter()
            .enumerate()
            .filter(|(slot, _)| !flagged.contains(slot))
            .map(|(_, mover)| mover)
            .collect();
        safe_move(&masked, &state, view.own_index, &field, &movers)
    }

    fn observe(&mut self, state: &JointState, actions: &[MoveAction]) {
        let view = &self.base.view;
        if self.histories.is_empty() {
            self.histories =
                view.opponent_indices.iter().map(|&j| vec![state.positions[j]]).collect();
        }
        for (slot, &j) in view.opponent_indices.iter().enumerate() {
            let landed = view.map.resolve(state.positions[j], actions[j]);
            self.histories[slot].push(landed);
        }
        self.base.observe_update(state, actions);
    }

    fn fallbacks(&self) -> u32 {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{step, GridMap};
    use crate::opponents::OpponentSpec;
    use crate::scenario::Scenario;

    fn view_for(
        map: GridMap,
        starts: Vec<Cell>,
        goals: Vec<Cell>,
        own: usize,
        seed: u64,
    ) -> PlannerView {
        let specs = (0..starts.len() - 1).map(|_| OpponentSpec::parse("sp").unwrap()).collect();
        let scenario = Scenario {
            name: "rules-test".into(),
            map: Arc::new(map),
            starts,
            goals,
            modelling_index: own,
            opponent_specs: specs,
            max_steps: 30,
            epsilon: 1e-3,
            seed,
        };
        PlannerView::from_scenario(&scenario, own, seed)
    }

    fn at(row: usize, col: usize) -> Cell {
        Cell { row, col }
    }

    #[test]
    fn astar_walks_into_a_blocker() {
        // Own path runs straight through a parked opponent; the planner
        // does not care and steps right anyway.
        let view =
            view_for(GridMap::open(5, 1), vec![at(0, 0), at(0, 2)], vec![at(0, 4), at(0, 2)], 0, 3);
        let mut planner = AstarPlanner::new(&view).unwrap();
        assert_eq!(planner.act(&view.initial), MoveAction::Right);
    }

    #[test]
    fn safe_stays_put_against_a_blocking_opponent() {
        // Open 3x5 room, own agent at the west wall aiming east, an
        // opponent parked between them. Approaching within one step of
        // the opponent is unsafe, and among the safe moves Stay keeps
        // the shortest landing distance, so the rule never advances.
        let goals = vec![at(1, 4), at(1, 2)];
        let view = view_for(GridMap::open(5, 3), vec![at(1, 0), at(1, 2)], goals.clone(), 0, 5);
        let mut planner = SafePlanner::new(&view).unwrap();
        let mut state = view.initial.clone();
        for _ in 0..6 {
            let own = planner.act(&state);
            assert_eq!(own, MoveAction::Stay);
            let actions = vec![own, MoveAction::Stay];
            let (next, collisions) = step(&view.map, &goals, &state, &actions);
            assert!(collisions.is_empty());
            planner.observe(&state, &actions);
            state = next;
        }
    }

    #[test]
    fn enhanced_safe_detours_after_the_watch_window() {
        let goals = vec![at(1, 4), at(1, 2)];
        let view = view_for(GridMap::open(5, 3), vec![at(1, 0), at(1, 2)], goals.clone(), 0, 5);
        let mut planner = EnhancedSafePlanner::new(&view, 3).unwrap();
        let mut state = view.initial.clone();
        let mut moved = None;
        for t in 0..6 {
            let own = planner.act(&state);
            if own != MoveAction::Stay {
                moved = Some((t, own));
                break;
            }
            let actions = vec![own, MoveAction::Stay];
            planner.observe(&state, &actions);
            state = step(&view.map, &goals, &state, &actions).0;
        }
        // Three stationary sightings flag the blocker; the masked
        // distance field then makes any sidestep (5 moves home) beat
        // waiting (6), and Up is scanned first.
        let (t, own) = moved.expect("the enhanced rule should eventually move");
        assert_eq!(own, MoveAction::Up);
        assert!(t >= 2, "needs k sightings before flagging, moved at t={t}");
    }

    #[test]
    fn enhanced_safe_stays_when_every_route_is_sealed() {
        // Dead-end corridor: the only way to the goal runs through the
        // parked opponent, so even after flagging there is no detour.
        let goals = vec![at(0, 2), at(0, 1)];
        let view = view_for(GridMap::open(3, 1), vec![at(0, 0), at(0, 1)], goals.clone(), 0, 5);
        let mut planner = EnhancedSafePlanner::new(&view, 2).unwrap();
        let mut state = view.initial.clone();
        for _ in 0..5 {
            let own = planner.act(&state);
            assert_eq!(own, MoveAction::Stay);
            let actions = vec![own, MoveAction::Stay];
            planner.observe(&state, &actions);
            state = step(&view.map, &goals, &state, &actions).0;
        }
    }

    #[test]
    fn safe_matches_astar_with_no_opponents_around() {
        // Sole agent on an open map: the safe filter never rejects a
        // move, and both rules break distance ties in scan order.
        let map = GridMap::open(4, 4);
        for start_row in 0..4 {
            for start_col in 0..4 {
                let start = at(start_row, start_col);
                let goal = at(2, 3);
                let view = view_for(map.clone(), vec![start], vec![goal], 0, 1);
                let mut astar = AstarPlanner::new(&view).unwrap();
                let mut safe = SafePlanner::new(&view).unwrap();
                let state = view.initial.clone();
                assert_eq!(astar.act(&state), safe.act(&state), "diverged from {start}");
            }
        }
    }
}

//! Planners built on solved models: the induced-MDP pair, the
//! belief-mixed Q planner, and the committed joint-plan pair.

use std::collections::HashSet;

use crate::env::{Cell, JointState, MoveAction};
use crate::ne_oracle::{bounded_cbs, draw_goal, ne_eval_cached, SolveCache};
use crate::solvers::{qmdp_action, solve_induced, ContextTables, InducedSolution};

use super::{argmax_action, Planner, PlannerBase, PlannerError, PlannerView};

/// Solves the belief-induced MDP and follows its greedy policy. In
/// fixed mode the prior-belief solution is kept for the whole episode;
/// in update mode the MDP is re-induced from the posterior every step.
pub struct MdpPlanner {
    base: PlannerBase,
    update_each_step: bool,
    solution: InducedSolution,
}

impl MdpPlanner {
    pub fn new(view: &PlannerView, update_each_step: bool) -> Result<Self, PlannerError> {
        let base = PlannerBase::new(view)?;
        let t = &view.tunables;
        let solution = solve_induced(&base.model, &base.belief, &view.initial, t.state_cap, t.vi_tol)?;
        Ok(MdpPlanner { base, update_each_step, solution })
    }
}

impl Planner for MdpPlanner {
    fn reset(&mut self) {
        self.base.reset();
        let t = &self.base.view.tunables;
        self.solution = solve_induced(
            &self.base.model,
            &self.base.belief,
            &self.base.view.initial,
            t.state_cap,
            t.vi_tol,
        )
        .expect("re-solving the construction-time instance");
    }

    fn act(&mut self, state: &JointState) -> MoveAction {
        let state = self.base.model.observe_state(state);
        if self.base.model.is_terminal(&state) {
            return MoveAction::Stay;
        }
        if self.update_each_step {
            let t = &self.base.view.tunables;
            match solve_induced(&self.base.model, &self.base.belief, &state, t.state_cap, t.vi_tol)
            {
                Ok(solution) => self.solution = solution,
                Err(err) => return self.base.safe_fallback(&state, &err.to_string()),
            }
        }
        match self.solution.greedy_action(&state) {
            Some(action) => action,
            // The opponents left the model's reachable set (their real
            // behaviour had zero mass under every hypothesis).
            None => self.base.safe_fallback(&state, "state outside the induced model"),
        }
    }

    fn observe(&mut self, state: &JointState, actions: &[MoveAction]) {
        self.base.observe_update(state, actions);
    }

    fn fallbacks(&self) -> u32 {
        self.base.fallbacks
    }
}

/// Keeps one solved MDP per opponent-goal context and acts greedily on
/// the belief-weighted mix of their Q-values.
pub struct QmdpPlanner {
    base: PlannerBase,
    tables: ContextTables,
}

impl QmdpPlanner {
    pub fn new(view: &PlannerView) -> Result<Self, PlannerError> {
        let base = PlannerBase::new(view)?;
        let t = &view.tunables;
        let tables = crate::solvers::solve_context_mdps(
            &base.model,
            &base.belief,
            &view.initial,
            t.context_cap,
            t.state_cap,
            t.vi_tol,
        )?;
        Ok(QmdpPlanner { base, tables })
    }
}

impl Planner for QmdpPlanner {
    fn reset(&mut self) {
        self.base.reset();
    }

    fn act(&mut self, state: &JointState) -> MoveAction {
        let state = self.base.model.observe_state(state);
        if self.base.model.is_terminal(&state) {
            return MoveAction::Stay;
        }
        match qmdp_action(&state, &self.base.belief, &self.tables) {
            Ok(action) => action,
            Err(err) => self.base.safe_fallback(&state, &err.to_string()),
        }
    }

    fn observe(&mut self, state: &JointState, actions: &[MoveAction]) {
        self.base.observe_update(state, actions);
    }

    fn fallbacks(&self) -> u32 {
        self.base.fallbacks
    }
}

/// Plans jointly against sampled opponent goals. Fixed mode draws one
/// goal per opponent from the prior, solves once, and walks the
/// committed path. Update mode re-runs the sampled-plan evaluation at
/// the posterior every step and follows its strongest first action.
pub struct CbsPlanner {
    base: PlannerBase,
    update_each_step: bool,
    committed: Option<Vec<Cell>>,
    cursor: usize,
    cache: SolveCache,
}

impl CbsPlanner {
    pub fn new(view: &PlannerView, update_each_step: bool) -> Result<Self, PlannerError> {
        let base = PlannerBase::new(view)?;
        let mut planner = CbsPlanner {
            base,
            update_each_step,
            committed: None,
            cursor: 0,
            cache: SolveCache::default(),
        };
        if !update_each_step {
            planner.commit_plan();
        }
        Ok(planner)
    }

    /// Draws a goal per live opponent from the prior and commits the
    /// own path of one bounded joint solve. Any failure leaves the
    /// commitment empty and every act degrades to the safe rule.
    fn commit_plan(&mut self) {
        self.committed = None;
        self.cursor = 0;
        let view = &self.base.view;
        let state = &view.initial;
        if state.arrived[view.own_index] {
            return;
        }

        let mut live = Vec::new();
        let mut obstacles = Vec::new();
        for (slot, &agent) in view.opponent_indices.iter().enumerate() {
            if state.arrived[agent] {
                obstacles.push(state.positions[agent]);
            } else {
                live.push((slot, agent));
            }
        }
        let mut taken: HashSet<Cell> = obstacles.iter().copied().collect();
        taken.insert(view.own_goal);

        let mut starts = vec![state.positions[view.own_index]];
        let mut goals = vec![view.own_goal];
        for &(slot, agent) in &live {
            match draw_goal(&self.base.belief, slot, &taken, &mut self.base.rng) {
                Some(goal) => {
                    taken.insert(goal);
                    starts.push(state.positions[agent]);
                    goals.push(goal);
                }
                None => return,
            }
        }

        let masked = view.map.with_obstacles(&obstacles);
        let t = &view.tunables;
        if let Ok(mut plan) = bounded_cbs(&masked, &starts, &goals, t.suboptimality, &t.cbs_limits)
        {
            self.committed = Some(plan.paths.swap_remove(0));
        }
    }

    fn follow_committed(&mut self, state: &JointState) -> MoveAction {
        let own = state.positions[self.base.view.own_index];
        let Some(path) = &self.committed else {
            return self.base.safe_fallback(state, "no committed plan");
        };
        if self.cursor >= path.len() || path[self.cursor] != own {
            return self.base.safe_fallback(state, "drifted off the committed plan");
        }
        if self.cursor + 1 >= path.len() {
            return MoveAction::Stay;
        }
        MoveAction::between(path[self.cursor], path[self.cursor + 1])
            .expect("plan steps are unit moves")
    }
}

impl Planner for CbsPlanner {
    fn reset(&mut self) {
        self.base.reset();
        self.cache = SolveCache::default();
        if self.update_each_step {
            self.committed = None;
            self.cursor = 0;
        } else {
            self.commit_plan();
        }
    }

    fn act(&mut self, state: &JointState) -> MoveAction {
        let state = self.base.model.observe_state(state);
        if self.base.model.is_terminal(&state) {
            return MoveAction::Stay;
        }
        if !self.update_each_step {
            return self.follow_committed(&state);
        }
        let view = &self.base.view;
        let t = &view.tunables;
        let result = ne_eval_cached(
            &state,
            &self.base.belief,
            view.own_index,
            view.own_goal,
            t.eval_samples,
            view.gamma,
            &view.rewards,
            t.suboptimality,
            &t.cbs_limits,
            &mut self.base.rng,
            &mut self.cache,
        );
        // A flat prior means every sample failed to produce a plan.
        if result.policy_prior.iter().all(|&p| (p - 0.2).abs() < 1e-12) {
            return self.base.safe_fallback(&state, "no sampled plan succeeded");
        }
        argmax_action(&result.policy_prior)
    }

    fn observe(&mut self, state: &JointState, actions: &[MoveAction]) {
        self.cursor += 1;
        self.base.observe_update(state, actions);
    }

    fn fallbacks(&self) -> u32 {
        self.base.fallbacks
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::env::{step, GridMap};
    use crate::opponents::OpponentSpec;
    use crate::scenario::Scenario;

    fn at(row: usize, col: usize) -> Cell {
        Cell { row, col }
    }

    fn view_for(
        map: GridMap,
        starts: Vec<Cell>,
        goals: Vec<Cell>,
        seed: u64,
    ) -> (PlannerView, Vec<Cell>) {
        let specs = (0..starts.len() - 1).map(|_| OpponentSpec::parse("sp").unwrap()).collect();
        let scenario = Scenario {
            name: "mdp-test".into(),
            map: Arc::new(map),
            starts,
            goals: goals.clone(),
            modelling_index: 0,
            opponent_specs: specs,
            max_steps: 30,
            epsilon: 1e-3,
            seed,
        };
        (PlannerView::from_scenario(&scenario, 0, seed), goals)
    }

    fn drive_to_goal(planner: &mut dyn Planner, view: &PlannerView, goals: &[Cell]) -> usize {
        let mut state = view.initial.clone();
        for t in 0..view.initial.positions.len() * 30 {
            if state.arrived[view.own_index] {
                return t;
            }
            let own = planner.act(&state);
            let mut actions = vec![MoveAction::Stay; state.positions.len()];
            actions[view.own_index] = own;
            let (next, collisions) = step(&view.map, goals, &state, &actions);
            assert!(collisions.is_empty(), "collided at t={t}");
            planner.observe(&state, &actions);
            state = next;
        }
        panic!("never arrived");
    }

    #[test]
    fn induced_mdp_planner_reaches_the_goal() {
        let (view, goals) = view_for(
            GridMap::open(4, 4),
            vec![at(0, 0), at(3, 3)],
            vec![at(0, 3), at(3, 3)],
            11,
        );
        let mut planner = MdpPlanner::new(&view, false).unwrap();
        let steps = drive_to_goal(&mut planner, &view, &goals);
        assert_eq!(steps, 3, "free-flow distance on the top row");
        assert_eq!(planner.fallbacks(), 0);
    }

    #[test]
    fn updating_mdp_planner_reaches_the_goal() {
        let (view, goals) = view_for(
            GridMap::open(4, 4),
            vec![at(0, 0), at(3, 0)],
            vec![at(2, 2), at(3, 3)],
            13,
        );
        let mut planner = MdpPlanner::new(&view, true).unwrap();
        let steps = drive_to_goal(&mut planner, &view, &goals);
        assert_eq!(steps, 4);
    }

    #[test]
    fn qmdp_planner_reaches_the_goal() {
        let (view, goals) = view_for(
            GridMap::open(4, 4),
            vec![at(0, 0), at(3, 3)],
            vec![at(0, 3), at(3, 3)],
            17,
        );
        let mut planner = QmdpPlanner::new(&view).unwrap();
        let steps = drive_to_goal(&mut planner, &view, &goals);
        assert_eq!(steps, 3);
    }

    #[test]
    fn committed_plan_walks_its_path_and_rests() {
        let (view, goals) = view_for(
            GridMap::open(5, 3),
            vec![at(0, 0), at(2, 4)],
            vec![at(0, 4), at(2, 0)],
            19,
        );
        let mut planner = CbsPlanner::new(&view, false).unwrap();
        assert!(planner.committed.is_some(), "open map must yield a plan");
        let steps = drive_to_goal(&mut planner, &view, &goals);
        assert_eq!(steps, 4);
        // Arrived: every further act is Stay.
        let mut state = view.initial.clone();
        state.positions[0] = at(0, 4);
        state.arrived[0] = true;
        assert_eq!(planner.act(&state), MoveAction::Stay);
    }

    #[test]
    fn replanning_cbs_reaches_the_goal() {
        let (view, goals) = view_for(
            GridMap::open(5, 3),
            vec![at(1, 0), at(0, 4)],
            vec![at(1, 4), at(2, 4)],
            23,
        );
        let mut planner = CbsPlanner::new(&view, true).unwrap();
        let steps = drive_to_goal(&mut planner, &view, &goals);
        assert_eq!(steps, 4);
    }

    #[test]
    fn reset_replays_identically() {
        let (view, goals) = view_for(
            GridMap::open(5, 3),
            vec![at(1, 0), at(0, 4)],
            vec![at(1, 4), at(2, 4)],
            29,
        );
        let mut planner = CbsPlanner::new(&view, false).unwrap();
        let first = planner.committed.clone();
        drive_to_goal(&mut planner, &view, &goals);
        planner.reset();
        assert_eq!(planner.committed, first, "reset must re-draw the same goals");
    }
}

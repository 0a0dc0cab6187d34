//! Conflict-based search, optimal and bounded-suboptimal.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::env::{Cell, GridMap, MoveAction};

use super::space_time::{space_time_focal, ConflictAvoidanceTable, ConstraintSet};

/// A set of conflict-free timestamped paths, one per agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NePlan {
    /// `paths[i][t]` is agent i's cell at time t; agents rest at the
    /// final cell afterwards.
    pub paths: Vec<Vec<Cell>>,
    /// Total arrival time across agents.
    pub sum_of_costs: usize,
}

impl NePlan {
    pub fn cost_of(&self, agent: usize) -> usize {
        self.paths[agent].len() - 1
    }

    /// First move of an agent's path; Stay for a zero-length path.
    pub fn first_action(&self, agent: usize) -> MoveAction {
        let path = &self.paths[agent];
        if path.len() < 2 {
            return MoveAction::Stay;
        }
        MoveAction::between(path[0], path[1]).expect("plan steps are unit moves")
    }

    /// One line per agent of space-separated `t:(row,col)` pairs.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for path in &self.paths {
            let line: Vec<String> =
                path.iter().enumerate().map(|(t, c)| format!("{t}:{c}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    /// Checks path endpoints, step validity and conflict-freeness.
    pub fn validate(
        &self,
        map: &GridMap,
        starts: &[Cell],
        goals: &[Cell],
    ) -> Result<(), String> {
        if self.paths.len() != starts.len() {
            return Err("plan/agent count mismatch".into());
        }
        for (i, path) in self.paths.iter().enumerate() {
            if path.is_empty() || path[0] != starts[i] || *path.last().unwrap() != goals[i] {
                return Err(format!("agent {i} endpoints wrong"));
            }
            for t in 1..path.len() {
                if MoveAction::between(path[t - 1], path[t]).is_none()
                    || !map.is_passable(path[t])
                {
                    return Err(format!("agent {i} invalid step at t={t}"));
                }
            }
        }
        match plan_conflicts(&self.paths).1 {
            Some(c) => Err(format!("conflict remains: {c:?}")),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conflict {
    Vertex { a: usize, b: usize, cell: Cell, t: usize },
    Swap { a: usize, b: usize, cell_a: Cell, cell_b: Cell, t: usize },
}

fn pos(path: &[Cell], t: usize) -> Cell {
    path[t.min(path.len() - 1)]
}

/// Counts conflicts across a path set and reports the earliest one.
/// Scans timesteps first, then agent pairs, so "first" is deterministic.
pub fn plan_conflicts(paths: &[Vec<Cell>]) -> (u32, Option<Conflict>) {
    let horizon = paths.iter().map(|p| p.len().saturating_sub(1)).max().unwrap_or(0);
    let mut count = 0;
    let mut first = None;
    for t in 1..=horizon {
        for a in 0..paths.len() {
            for b in a + 1..paths.len() {
                let (pa, pb) = (pos(&paths[a], t), pos(&paths[b], t));
                let conflict = if pa == pb {
                    Some(Conflict::Vertex { a, b, cell: pa, t })
                } else {
                    let (qa, qb) = (pos(&paths[a], t - 1), pos(&paths[b], t - 1));
                    (pa == qb && pb == qa && pa != qa).then_some(Conflict::Swap {
                        a,
                        b,
                        cell_a: pa,
                        cell_b: pb,
                        t,
                    })
                };
                if let Some(c) = conflict {
                    count += 1;
                    first.get_or_insert(c);
                }
            }
        }
    }
    // Resting agents can also collide at t = 0 only on bad instances;
    // start positions are required distinct, so t starts at 1.
    (count, first)
}

/// Deterministic search budgets with an optional wall clock. The
/// expansion caps make in-planner behaviour reproducible; the deadline
/// is meant for interactive use.
#[derive(Debug, Clone, Copy)]
pub struct CbsLimits {
    pub max_high_expansions: usize,
    pub max_low_expansions: usize,
    pub wall_clock: Option<Duration>,
}

impl Default for CbsLimits {
    fn default() -> Self {
        CbsLimits { max_high_expansions: 20_000, max_low_expansions: 200_000, wall_clock: None }
    }
}

impl CbsLimits {
    /// Tight budgets for per-leaf evaluation inside tree search.
    pub fn evaluation() -> Self {
        CbsLimits { max_high_expansions: 256, max_low_expansions: 20_000, wall_clock: None }
    }
}

#[derive(Debug, Error)]
pub enum CbsError {
    #[error("bad instance: {0}")]
    BadInstance(String),
    #[error("no conflict-free plan exists")]
    Infeasible,
    #[error("search budget exhausted")]
    Timeout { incumbent: Option<NePlan> },
}

struct HighNode {
    constraints: Vec<ConstraintSet>,
    paths: Vec<Vec<Cell>>,
    fmins: Vec<usize>,
    cost: usize,
    lb: usize,
    conflicts: u32,
    first_conflict: Option<Conflict>,
}

/// Optimal conflict-based search: best-first on sum-of-costs, branching
/// on the earliest conflict with one constraint per child.
pub fn cbs(
    map: &GridMap,
    starts: &[Cell],
    goals: &[Cell],
    limits: &CbsLimits,
) -> Result<NePlan, CbsError> {
    engine(map, starts, goals, 0.0, limits)
}

/// Bounded-suboptimal variant: focal search over both levels, returning
/// a plan of cost at most (1+w) times the optimum.
pub fn bounded_cbs(
    map: &GridMap,
    starts: &[Cell],
    goals: &[Cell],
    w: f64,
    limits: &CbsLimits,
) -> Result<NePlan, CbsError> {
    if !(w >= 0.0) {
        return Err(CbsError::BadInstance(format!("suboptimality factor {w} must be >= 0")));
    }
    engine(map, starts, goals, w, limits)
}

fn engine(
    map: &GridMap,
    starts: &[Cell],
    goals: &[Cell],
    w: f64,
    limits: &CbsLimits,
) -> Result<NePlan, CbsError> {
    let n = starts.len();
    if n == 0 || goals.len() != n {
        return Err(CbsError::BadInstance("need matching nonempty starts and goals".into()));
    }
    for (what, cells) in [("start", starts), ("goal", goals)] {
        for (i, &c) in cells.iter().enumerate() {
            if !map.is_passable(c) {
                return Err(CbsError::BadInstance(format!("agent {i} {what} {c} not passable")));
            }
            if cells[..i].contains(&c) {
                return Err(CbsError::BadInstance(format!("duplicate {what} {c}")));
            }
        }
    }

    let t_start = Instant::now();
    let horizon_for = |constraints: &[ConstraintSet]| {
        map.empty_cells() + constraints.iter().map(ConstraintSet::latest_time).max().unwrap_or(0) + 1
    };

    let root_constraints = vec![ConstraintSet::default(); n];
    let mut root_paths: Vec<Vec<Cell>> = Vec::with_capacity(n);
    let mut root_fmins = Vec::with_capacity(n);
    let mut cat = ConflictAvoidanceTable::default();
    for i in 0..n {
        let (path, fmin) = space_time_focal(
            map,
            starts[i],
            goals[i],
            &root_constraints[i],
            horizon_for(&root_constraints),
            w,
            Some(&cat),
            limits.max_low_expansions,
        )
        .ok_or(CbsError::Infeasible)?;
        cat.add_path(&path);
        root_paths.push(path);
        root_fmins.push(fmin);
    }
    let (root_conflicts, root_first) = plan_conflicts(&root_paths);
    let root = HighNode {
        constraints: root_constraints,
        cost: root_paths.iter().map(|p| p.len() - 1).sum(),
        lb: root_fmins.iter().sum(),
        fmins: root_fmins,
        paths: root_paths,
        conflicts: root_conflicts,
        first_conflict: root_first,
    };

    let mut arena = vec![root];
    let mut open = BTreeSet::<(usize, usize)>::new();
    let mut focal = BTreeSet::<(u32, usize, usize)>::new();
    let mut pending = BTreeSet::<(usize, usize)>::new();
    let mut incumbent: Option<usize> = None;
    open.insert((arena[0].lb, 0));
    focal.insert((arena[0].conflicts, arena[0].cost, 0));
    let mut bound_lb = arena[0].lb;
    let mut expansions = 0usize;

    let best_plan = |arena: &[HighNode], id: Option<usize>| {
        id.map(|i| NePlan { paths: arena[i].paths.clone(), sum_of_costs: arena[i].cost })
    };

    loop {
        if open.first().is_none() {
            return Err(CbsError::Infeasible);
        }
        let min_lb = open.first().unwrap().0;
        if min_lb > bound_lb {
            bound_lb = min_lb;
            let limit = bound_lb as f64 * (1.0 + w) + 1e-9;
            while let Some(&key @ (cost, id)) = pending.first() {
                if cost as f64 > limit {
                    break;
                }
                pending.remove(&key);
                focal.insert((arena[id].conflicts, cost, id));
            }
        }

        let &(conflicts, cost, id) = focal.first().expect("minimum-lb node is focal-eligible");
        focal.remove(&(conflicts, cost, id));
        open.remove(&(arena[id].lb, id));

        let Some(conflict) = arena[id].first_conflict else {
            return Ok(NePlan { paths: arena[id].paths.clone(), sum_of_costs: arena[id].cost });
        };

        expansions += 1;
        if expansions > limits.max_high_expansions {
            return Err(CbsError::Timeout { incumbent: best_plan(&arena, incumbent) });
        }
        if let Some(budget) = limits.wall_clock {
            if t_start.elapsed() > budget {
                return Err(CbsError::Timeout { incumbent: best_plan(&arena, incumbent) });
            }
        }

        for side in 0..2 {
            let (agent, constraint): (usize, Box<dyn Fn(&mut ConstraintSet)>) = match conflict {
                Conflict::Vertex { a, b, cell, t } => {
                    let agent = if side == 0 { a } else { b };
                    (agent, Box::new(move |c: &mut ConstraintSet| c.add_vertex(cell, t)))
                }
                Conflict::Swap { a, b, cell_a, cell_b, t } => {
                    if side == 0 {
                        (a, Box::new(move |c: &mut ConstraintSet| c.add_edge(cell_b, cell_a, t)))
                    } else {
                        (b, Box::new(move |c: &mut ConstraintSet| c.add_edge(cell_a, cell_b, t)))
                    }
                }
            };
            let mut constraints = arena[id].constraints.clone();
            constraint(&mut constraints[agent]);

            let mut cat = ConflictAvoidanceTable::default();
            for j in (0..n).filter(|&j| j != agent) {
                cat.add_path(&arena[id].paths[j]);
            }
            let Some((path, fmin)) = space_time_focal(
                map,
                starts[agent],
                goals[agent],
                &constraints[agent],
                horizon_for(&constraints),
                w,
                Some(&cat),
                limits.max_low_expansions,
            ) else {
                continue;
            };

            let mut paths = arena[id].paths.clone();
            paths[agent] = path;
            let mut fmins = arena[id].fmins.clone();
            fmins[agent] = fmin;
            let (child_conflicts, child_first) = plan_conflicts(&paths);
            let child = HighNode {
                constraints,
                cost: paths.iter().map(|p| p.len() - 1).sum(),
                lb: fmins.iter().sum(),
                fmins,
                paths,
                conflicts: child_conflicts,
                first_conflict: child_first,
            };
            let child_id = arena.len();
            if child_first.is_none() {
                let better = incumbent.map_or(true, |i: usize| child.cost < arena[i].cost);
                if better {
                    incumbent = Some(child_id);
                }
            }
            open.insert((child.lb, child_id));
            if child.cost as f64 <= bound_lb as f64 * (1.0 + w) + 1e-9 {
                focal.insert((child.conflicts, child.cost, child_id));
            } else {
                pending.insert((child.cost, child_id));
            }
            arena.push(child);
        }
    }
}

//! Constrained single-agent shortest paths in space-time.

use std::collections::{BTreeSet, HashMap, HashSet};

use crate::env::{bfs_distance, Cell, DistanceField, GridMap, MoveAction};

/// Vertex and edge constraints for one agent.
#[derive(Debug, Clone, Default)]
pub struct ConstraintSet {
    vertex: HashSet<(Cell, usize)>,
    edge: HashSet<(Cell, Cell, usize)>,
}

impl ConstraintSet {
    /// Forbids occupying `cell` at time `t`.
    pub fn add_vertex(&mut self, cell: Cell, t: usize) {
        self.vertex.insert((cell, t));
    }

    /// Forbids moving `from` to `to`, arriving at time `t`.
    pub fn add_edge(&mut self, from: Cell, to: Cell, t: usize) {
        self.edge.insert((from, to, t));
    }

    pub fn blocks_vertex(&self, cell: Cell, t: usize) -> bool {
        self.vertex.contains(&(cell, t))
    }

    pub fn blocks_edge(&self, from: Cell, to: Cell, t: usize) -> bool {
        self.edge.contains(&(from, to, t))
    }

    /// Latest time a vertex constraint touches `cell`; the agent cannot
    /// settle there until that has passed.
    pub fn latest_vertex_at(&self, cell: Cell) -> Option<usize> {
        self.vertex.iter().filter(|&&(c, _)| c == cell).map(|&(_, t)| t).max()
    }

    pub fn latest_time(&self) -> usize {
        let v = self.vertex.iter().map(|&(_, t)| t).max().unwrap_or(0);
        let e = self.edge.iter().map(|&(_, _, t)| t).max().unwrap_or(0);
        v.max(e)
    }
}

/// The other agents' committed paths, hashed for constant-time lookup;
/// counts how many of them a candidate move would run into. Agents rest
/// at their final cell forever.
#[derive(Default)]
pub(crate) struct ConflictAvoidanceTable {
    /// Occupancy while still walking: (cell, t) for t < path end.
    vertex: HashMap<(Cell, usize), u32>,
    /// Traversed edges keyed by (from, to, arrival t).
    edge: HashMap<(Cell, Cell, usize), u32>,
    /// Final cells with the time each agent settles there.
    rest: HashMap<Cell, (usize, u32)>,
}

impl ConflictAvoidanceTable {
    pub fn add_path(&mut self, path: &[Cell]) {
        if path.is_empty() {
            return;
        }
        let last = path.len() - 1;
        for (t, &cell) in path.iter().enumerate().take(last) {
            *self.vertex.entry((cell, t)).or_insert(0) += 1;
        }
        for (t, pair) in path.windows(2).enumerate() {
            *self.edge.entry((pair[0], pair[1], t + 1)).or_insert(0) += 1;
        }
        let entry = self.rest.entry(path[last]).or_insert((last, 0));
        entry.0 = entry.0.min(last);
        entry.1 += 1;
    }

    fn occupancy(&self, cell: Cell, t: usize) -> u32 {
        let walking = self.vertex.get(&(cell, t)).copied().unwrap_or(0);
        let resting = match self.rest.get(&cell) {
            Some(&(settle, n)) if t >= settle => n,
            _ => 0,
        };
        walking + resting
    }

    /// Soft conflicts caused by moving `from -> to`, arriving at `t`.
    fn conflicts(&self, from: Cell, to: Cell, t: usize) -> u32 {
        let mut n = self.occupancy(to, t);
        if from != to {
            n += self.edge.get(&(to, from, t)).copied().unwrap_or(0);
        }
        n
    }
}

struct Node {
    cell: Cell,
    t: usize,
    parent: Option<usize>,
}

fn reconstruct(arena: &[Node], mut at: usize) -> Vec<Cell> {
    let mut cells = Vec::new();
    loop {
        cells.push(arena[at].cell);
        match arena[at].parent {
            Some(p) => at = p,
            None => break,
        }
    }
    cells.reverse();
    cells
}

/// Minimum-length path from `start` to `goal` respecting `constraints`,
/// searching states (cell, time) up to `horizon`. The agent rests at the
/// goal after arriving, so arrival only counts once every vertex
/// constraint at the goal lies in the past. Returns `None` when no path
/// exists within the horizon.
pub fn space_time_astar(
    map: &GridMap,
    start: Cell,
    goal: Cell,
    constraints: &ConstraintSet,
    horizon: usize,
) -> Option<Vec<Cell>> {
    space_time_focal(map, start, goal, constraints, horizon, 0.0, None, 0).map(|(p, _)| p)
}

/// Focal variant: expands nodes whose f lies within (1+w) of the best
/// known f, preferring fewer soft conflicts against `cat`. Returns the
/// path and the proven lower bound on the optimal constrained cost; the
/// path costs at most (1+w) times that bound. `max_expansions` of 0
/// means unlimited.
#[allow(clippy::too_many_arguments)]
pub(crate) fn space_time_focal(
    map: &GridMap,
    start: Cell,
    goal: Cell,
    constraints: &ConstraintSet,
    horizon: usize,
    w: f64,
    cat: Option<&ConflictAvoidanceTable>,
    max_expansions: usize,
) -> Option<(Vec<Cell>, usize)> {
    if !map.is_passable(start) || !map.is_passable(goal) {
        return None;
    }
    let field: DistanceField = bfs_distance(map, goal).ok()?;
    if !field.is_reachable(start) {
        return None;
    }
    let settle_after = constraints.latest_vertex_at(goal).map_or(0, |t| t + 1);

    let mut arena = vec![Node { cell: start, t: 0, parent: None }];
    // One open list under two orders: `open` is plain A* (f, id) order
    // and tracks the bound; `focal` holds the nodes with f within the
    // bound, ordered by accumulated soft conflicts. Everything else
    // waits in `pending` until the bound widens enough.
    let mut open = BTreeSet::<(usize, usize)>::new();
    let mut focal = BTreeSet::<(u32, usize, usize)>::new();
    let mut pending = BTreeSet::<(usize, usize)>::new();
    let mut meta: HashMap<usize, (usize, u32)> = HashMap::new();
    let mut closed: HashSet<(Cell, usize)> = HashSet::new();
    let mut expansions = 0usize;

    let f0 = field.get(start) as usize;
    open.insert((f0, 0));
    focal.insert((0, f0, 0));
    meta.insert(0, (f0, 0));
    let mut bound_f = f0;

    loop {
        let Some(&(min_f, _)) = open.first() else { return None };
        if min_f > bound_f {
            bound_f = min_f;
            let limit = bound_f as f64 * (1.0 + w) + 1e-9;
            while let Some(&key @ (f, id)) = pending.first() {
                if f as f64 > limit {
                    break;
                }
                pending.remove(&key);
                focal.insert((meta[&id].1, f, id));
            }
        }

        let &(conflicts, f, id) = focal.first().expect("A* minimum is always focal-eligible");
        focal.remove(&(conflicts, f, id));
        open.remove(&(f, id));

        let node_cell = arena[id].cell;
        let node_t = arena[id].t;
        if !closed.insert((node_cell, node_t)) {
            continue;
        }
        if node_cell == goal && node_t >= settle_after {
            return Some((reconstruct(&arena, id), bound_f));
        }
        expansions += 1;
        if max_expansions > 0 && expansions > max_expansions {
            return None;
        }

        let t = node_t + 1;
        if t > horizon {
            continue;
        }
        for action in MoveAction::ALL {
            let next = match action {
                MoveAction::Stay => Some(node_cell),
                mv => map.neighbor(node_cell, mv),
            };
            let Some(next) = next else { continue };
            if closed.contains(&(next, t))
                || constraints.blocks_vertex(next, t)
                || constraints.blocks_edge(node_cell, next, t)
                || !field.is_reachable(next)
            {
                continue;
            }
            let id_new = arena.len();
            arena.push(Node { cell: next, t, parent: Some(id) });
            let f_new = t + field.get(next) as usize;
            let c_new = conflicts + cat.map_or(0, |c| c.conflicts(node_cell, next, t));
            meta.insert(id_new, (f_new, c_new));
            open.insert((f_new, id_new));
            if f_new as f64 <= bound_f as f64 * (1.0 + w) + 1e-9 {
                focal.insert((c_new, f_new, id_new));
            } else {
                pending.insert((f_new, id_new));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corridor() -> GridMap {
        GridMap::parse("height 5 1\n.....\n").unwrap()
    }

    #[test]
    fn unconstrained_path_has_bfs_length() {
        let map = GridMap::open(4, 4);
        let path =
            space_time_astar(&map, Cell::new(0, 0), Cell::new(3, 3), &ConstraintSet::default(), 50)
                .unwrap();
        assert_eq!(path.len() - 1, 6);
        assert_eq!(path[0], Cell::new(0, 0));
        assert_eq!(*path.last().unwrap(), Cell::new(3, 3));
    }

    #[test]
    fn vertex_constraint_forces_a_wait() {
        // Corridor (0,0)..(0,4); block the cell (0,1) at t = 1.
        let map = corridor();
        let mut cons = ConstraintSet::default();
        cons.add_vertex(Cell::new(0, 1), 1);
        let path = space_time_astar(&map, Cell::new(0, 0), Cell::new(0, 4), &cons, 50).unwrap();
        assert_eq!(path.len() - 1, 5);
        assert_eq!(path[1], Cell::new(0, 0));
    }

    #[test]
    fn edge_constraint_blocks_the_move() {
        let map = corridor();
        let mut cons = ConstraintSet::default();
        cons.add_edge(Cell::new(0, 0), Cell::new(0, 1), 1);
        let path = space_time_astar(&map, Cell::new(0, 0), Cell::new(0, 4), &cons, 50).unwrap();
        assert_eq!(path.len() - 1, 5);
    }

    #[test]
    fn goal_constraint_delays_settling() {
        // A vertex constraint at the goal after the natural arrival time
        // forbids resting there until it has passed.
        let map = corridor();
        let mut cons = ConstraintSet::default();
        cons.add_vertex(Cell::new(0, 4), 6);
        let path = space_time_astar(&map, Cell::new(0, 0), Cell::new(0, 4), &cons, 50).unwrap();
        assert!(path.len() - 1 >= 7);
    }

    #[test]
    fn sealed_goal_is_infeasible() {
        let map = GridMap::parse("height 3 1\n.@.\n").unwrap();
        assert!(space_time_astar(
            &map,
            Cell::new(0, 0),
            Cell::new(0, 2),
            &ConstraintSet::default(),
            50
        )
        .is_none());
    }

    #[test]
    fn horizon_cap_limits_waiting() {
        let map = corridor();
        let mut cons = ConstraintSet::default();
        for t in 0..20 {
            cons.add_vertex(Cell::new(0, 4), t);
        }
        assert!(space_time_astar(&map, Cell::new(0, 0), Cell::new(0, 4), &cons, 10).is_none());
    }

    #[test]
    fn zero_length_when_already_at_goal() {
        let map = corridor();
        let path = space_time_astar(
            &map,
            Cell::new(0, 2),
            Cell::new(0, 2),
            &ConstraintSet::default(),
            10,
        )
        .unwrap();
        assert_eq!(path, vec![Cell::new(0, 2)]);
    }

    #[test]
    fn focal_detour_respects_bound() {
        // A committed path occupies the straight corridor; with slack the
        // focal search pays one extra step to avoid it.
        let map = GridMap::open(5, 3);
        let other: Vec<Cell> = (0..5).map(|c| Cell::new(1, 4 - c)).collect();
        let mut cat = ConflictAvoidanceTable::default();
        cat.add_path(&other);
        let (path, fmin) = space_time_focal(
            &map,
            Cell::new(1, 0),
            Cell::new(1, 4),
            &ConstraintSet::default(),
            50,
            0.5,
            Some(&cat),
            0,
        )
        .unwrap();
        assert_eq!(fmin, 4);
        assert!(path.len() - 1 <= 6);
    }
}

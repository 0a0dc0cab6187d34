//! Independent reference implementations the integration tests check
//! the library against. Everything here recomputes its answer from
//! first principles (coordinate arithmetic, exhaustive enumeration,
//! linear algebra) instead of calling the code paths under test.

#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use marp_core::env::{Cell, GridMap, JointState, MoveAction};
use marp_core::model::RewardParams;
use marp_core::opponents::HypothesisPolicy;
use marp_core::solvers::Mdp;

/// Where a move lands under the blocked-moves-stay rule, recomputed
/// from deltas and the occupancy grid alone.
pub fn resolve_move(map: &GridMap, cell: Cell, action: MoveAction) -> Cell {
    let (dr, dc) = action.delta();
    let row = cell.row as isize + dr;
    let col = cell.col as isize + dc;
    if row < 0 || col < 0 || row as usize >= map.height() || col as usize >= map.width() {
        return cell;
    }
    let next = Cell::new(row as usize, col as usize);
    if map.is_passable(next) {
        next
    } else {
        cell
    }
}

/// Vertex or swap collision between two agents' position deltas.
pub fn pair_collides(prev_a: Cell, next_a: Cell, prev_b: Cell, next_b: Cell) -> bool {
    let vertex = next_a == next_b;
    let swap = prev_a != prev_b && next_a == prev_b && next_b == prev_a;
    vertex || swap
}

/// All colliding pairs between two consecutive position vectors.
pub fn joint_collisions(prev: &[Cell], next: &[Cell]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..prev.len() {
        for j in i + 1..prev.len() {
            if pair_collides(prev[i], next[i], prev[j], next[j]) {
                out.push((i, j));
            }
        }
    }
    out
}

/// The safe action set of agent `me`: moves to a reachable cell that no
/// single move of any other agent can turn into a vertex or swap
/// collision. Arrived agents still threaten the cell they sit on, since
/// staying put is one of their moves.
pub fn safe_action_set(map: &GridMap, state: &JointState, me: usize) -> Vec<MoveAction> {
    let own = state.positions[me];
    MoveAction::ALL
        .into_iter()
        .filter(|&a| {
            let next = match a {
                MoveAction::Stay => own,
                _ => {
                    let landed = resolve_move(map, own, a);
                    if landed == own {
                        return false; // blocked, not a candidate move
                    }
                    landed
                }
            };
            (0..state.positions.len()).filter(|&j| j != me).all(|j| {
                let other = state.positions[j];
                MoveAction::ALL
                    .into_iter()
                    .all(|b| !pair_collides(own, next, other, resolve_move(map, other, b)))
            })
        })
        .collect()
}

/// Exact value of a deterministic policy by solving the linear system
/// `(I - gamma P) v = r` with Gaussian elimination.
pub fn policy_values(mdp: &Mdp, policy: &[usize]) -> Vec<f64> {
    let n = mdp.n_states();
    let mut a = vec![vec![0.0f64; n + 1]; n];
    for s in 0..n {
        a[s][s] = 1.0;
        let action = policy[s];
        for &(t, p) in &mdp.transitions[s][action] {
            a[s][t] -= mdp.gamma * p;
        }
        a[s][n] = mdp.rewards[s][action];
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("nonempty column");
        a.swap(col, pivot);
        assert!(a[col][col].abs() > 1e-12, "singular policy system");
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = a[row][col] / a[col][col];
            for k in col..=n {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    (0..n).map(|s| a[s][n] / a[s][s]).collect()
}

/// Optimal values by brute force: enumerate every deterministic policy,
/// evaluate each exactly, take the pointwise maximum.
pub fn enumerated_optimal_values(mdp: &Mdp) -> Vec<f64> {
    let n = mdp.n_states();
    let actions = mdp.n_actions();
    let mut best = vec![f64::NEG_INFINITY; n];
    let mut policy = vec![0usize; n];
    loop {
        for (s, (v, pv)) in best.iter_mut().zip(policy_values(mdp, &policy)).enumerate() {
            let _ = s;
            if pv > *v {
                *v = pv;
            }
        }
        let mut s = 0;
        loop {
            if s == n {
                return best;
            }
            policy[s] += 1;
            if policy[s] < actions {
                break;
            }
            policy[s] = 0;
            s += 1;
        }
    }
}

/// A dense random MDP with exactly normalized rows.
pub fn random_mdp(rng: &mut ChaCha8Rng, max_states: usize, actions: usize, gamma: f64) -> Mdp {
    let n = rng.gen_range(2..=max_states);
    let mut transitions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for _ in 0..n {
        let mut rows = Vec::with_capacity(actions);
        let mut reward_row = Vec::with_capacity(actions);
        for _ in 0..actions {
            let targets = rng.gen_range(1..=n);
            let mut row: Vec<(usize, f64)> =
                (0..targets).map(|_| (rng.gen_range(0..n), rng.gen_range(0.1..1.0))).collect();
            row.sort_unstable_by_key(|&(t, _)| t);
            row.dedup_by(|a, b| {
                if a.0 == b.0 {
                    b.1 += a.1;
                    true
                } else {
                    false
                }
            });
            let total: f64 = row.iter().map(|&(_, p)| p).sum();
            for entry in &mut row {
                entry.1 /= total;
            }
            rows.push(row);
            reward_row.push(rng.gen_range(-1.0..1.0));
        }
        transitions.push(rows);
        rewards.push(reward_row);
    }
    Mdp { transitions, rewards, terminal: vec![false; n], gamma }
}

/// A random map whose passable cells form one connected component.
pub fn random_connected_map(
    rng: &mut ChaCha8Rng,
    width: usize,
    height: usize,
    max_obstacles: usize,
) -> GridMap {
    loop {
        let open = GridMap::open(width, height);
        let count = rng.gen_range(0..=max_obstacles);
        let walls: Vec<Cell> = (0..count)
            .map(|_| Cell::new(rng.gen_range(0..height), rng.gen_range(0..width)))
            .collect();
        let map = open.with_obstacles(&walls);
        let cells = map.passable_cells();
        if cells.is_empty() {
            continue;
        }
        let mut seen = vec![cells[0]];
        let mut frontier = vec![cells[0]];
        while let Some(cell) = frontier.pop() {
            for a in MoveAction::ALL {
                let next = resolve_move(&map, cell, a);
                if next != cell && !seen.contains(&next) {
                    seen.push(next);
                    frontier.push(next);
                }
            }
        }
        if seen.len() == cells.len() {
            return map;
        }
    }
}

/// Optimal sum-of-costs for simultaneously moving agents by uniform-cost
/// search over the joint space.
///
/// A state is the position vector plus a finished mask. Finishing is an
/// explicit zero-cost commitment available to any agent standing on its
/// goal; finished agents never move again but keep blocking their cell.
/// A movement edge charges one unit per unfinished agent, which makes
/// the accumulated cost equal the sum of individual arrival times.
pub fn joint_optimal_cost(map: &GridMap, starts: &[Cell], goals: &[Cell]) -> Option<usize> {
    let n = starts.len();
    assert!(n <= 3, "joint-space oracle cost grows as 5^n");
    let full: u32 = (1 << n) - 1;

    let mut arena: Vec<(Vec<Cell>, u32)> = Vec::new();
    let mut id_of: HashMap<(Vec<Cell>, u32), usize> = HashMap::new();
    let mut best: Vec<usize> = Vec::new();
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> = BinaryHeap::new();

    let mut intern = |key: (Vec<Cell>, u32), arena: &mut Vec<(Vec<Cell>, u32)>,
                      best: &mut Vec<usize>| {
        *id_of.entry(key.clone()).or_insert_with(|| {
            arena.push(key);
            best.push(usize::MAX);
            arena.len() - 1
        })
    };

    let start_id = intern((starts.to_vec(), 0), &mut arena, &mut best);
    best[start_id] = 0;
    heap.push(Reverse((0, start_id)));

    while let Some(Reverse((d, id))) = heap.pop() {
        if d > best[id] {
            continue;
        }
        let (positions, finished) = arena[id].clone();
        if finished == full {
            return Some(d);
        }

        let mut relax = |key: (Vec<Cell>, u32), cost: usize| {
            let next_id = intern(key, &mut arena, &mut best);
            if cost < best[next_id] {
                best[next_id] = cost;
                heap.push(Reverse((cost, next_id)));
            }
        };

        for i in 0..n {
            if finished & (1 << i) == 0 && positions[i] == goals[i] {
                relax((positions.clone(), finished | (1 << i)), d);
            }
        }

        let active: Vec<usize> = (0..n).filter(|i| finished & (1 << i) == 0).collect();
        let step_cost = active.len();
        let choices: Vec<Vec<Cell>> = active
            .iter()
            .map(|&i| {
                let here = positions[i];
                let mut cells = vec![here];
                for a in MoveAction::ALL {
                    let c = resolve_move(map, here, a);
                    if c != here {
                        cells.push(c);
                    }
                }
                cells
            })
            .collect();

        let mut pick = vec![0usize; active.len()];
        'joint: loop {
            let mut next = positions.clone();
            for (k, &i) in active.iter().enumerate() {
                next[i] = choices[k][pick[k]];
            }
            if joint_collisions(&positions, &next).is_empty() {
                relax((next, finished), d + step_cost);
            }
            let mut k = 0;
            loop {
                if k == pick.len() {
                    break 'joint;
                }
                pick[k] += 1;
                if pick[k] < choices[k].len() {
                    break;
                }
                pick[k] = 0;
                k += 1;
            }
        }
    }
    None
}

/// Hand-rolled expectimax over own actions and opponent responses with
/// exact Bayes updates along the first `depth` plies and a zero leaf
/// value at the frontier. The gold standard for the uniform search with
/// a zero evaluator.
pub struct Expectimax<'a> {
    pub map: &'a GridMap,
    pub own_index: usize,
    pub own_goal: Cell,
    pub rewards: RewardParams,
    pub gamma: f64,
    /// Agent index per opponent slot.
    pub opponents: &'a [usize],
    pub policies: &'a [HypothesisPolicy],
}

impl Expectimax<'_> {
    pub fn root_scores(&self, state: &JointState, priors: &[Vec<f64>], depth: usize) -> [f64; 5] {
        let mut scores = [0.0; 5];
        for (i, action) in MoveAction::ALL.into_iter().enumerate() {
            scores[i] = self.action_value(state, priors, depth, action);
        }
        scores
    }

    fn state_value(&self, state: &JointState, priors: &[Vec<f64>], depth: usize) -> f64 {
        if depth == 0 {
            return 0.0;
        }
        MoveAction::ALL
            .into_iter()
            .map(|a| self.action_value(state, priors, depth, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn action_value(
        &self,
        state: &JointState,
        priors: &[Vec<f64>],
        depth: usize,
        own: MoveAction,
    ) -> f64 {
        let me = self.own_index;
        let own_next = resolve_move(self.map, state.positions[me], own);

        let marginals: Vec<[f64; 5]> = self
            .opponents
            .iter()
            .zip(priors)
            .map(|(&j, prior)| {
                let mut m = [0.0; 5];
                for (policy, &w) in self.policies.iter().zip(prior) {
                    let dist = policy.action_dist(self.map, state.positions[j]);
                    for k in 0..5 {
                        m[k] += w * dist[k];
                    }
                }
                m
            })
            .collect();

        let mut total = 0.0;
        let mut combo = vec![0usize; self.opponents.len()];
        'combos: loop {
            let mut weight = 1.0;
            for (slot, &a) in combo.iter().enumerate() {
                weight *= marginals[slot][a];
            }
            if weight > 0.0 {
                total += weight * self.outcome_value(state, priors, depth, own_next, &combo);
            }
            let mut slot = 0;
            loop {
                if slot == combo.len() {
                    break 'combos;
                }
                combo[slot] += 1;
                if combo[slot] < 5 {
                    break;
                }
                combo[slot] = 0;
                slot += 1;
            }
        }
        total
    }

    fn outcome_value(
        &self,
        state: &JointState,
        priors: &[Vec<f64>],
        depth: usize,
        own_next: Cell,
        combo: &[usize],
    ) -> f64 {
        let me = self.own_index;
        let mut next = state.clone();
        next.positions[me] = own_next;

        // Resolved per-slot moves: arrived opponents hold still.
        let mut observed = Vec::with_capacity(combo.len());
        for (slot, &j) in self.opponents.iter().enumerate() {
            let landed = if state.arrived[j] {
                state.positions[j]
            } else {
                resolve_move(self.map, state.positions[j], MoveAction::ALL[combo[slot]])
            };
            observed.push(MoveAction::between(state.positions[j], landed).expect("unit move"));
            next.positions[j] = landed;
        }

        let collided = (0..state.positions.len()).any(|j| {
            j != me
                && pair_collides(state.positions[me], own_next, state.positions[j], next.positions[j])
        });
        let reached = own_next == self.own_goal;
        if collided {
            return self.rewards.collision_penalty;
        }
        if reached {
            return self.rewards.goal_reward;
        }

        let posteriors: Vec<Vec<f64>> = self
            .opponents
            .iter()
            .zip(priors)
            .zip(&observed)
            .map(|((&j, prior), &seen)| {
                let mut post: Vec<f64> = self
                    .policies
                    .iter()
                    .zip(prior)
                    .map(|(policy, &w)| {
                        policy.action_dist(self.map, state.positions[j])[seen.index()] * w
                    })
                    .collect();
                let total: f64 = post.iter().sum();
                if total <= 0.0 {
                    return prior.clone();
                }
                for p in &mut post {
                    *p /= total;
                }
                post
            })
            .collect();

        self.rewards.step_reward + self.gamma * self.state_value(&next, &posteriors, depth - 1)
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

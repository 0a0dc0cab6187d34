//! Invariants over randomly generated maps, beliefs and MDPs, checked
//! against the independent oracles in `common`.

mod common;

use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use marp_core::belief::{init_belief, joint_action_dist, update, BeliefTemperature};
use marp_core::env::{bfs_distance, step, Cell, GridMap, JointState, MoveAction};
use marp_core::safe_rule::{safe_move, uniform_move_dists};
use marp_core::solvers::{bellman_backup, value_iteration};

/// A small map with obstacles plus `k` distinct passable cells on it.
fn grid_with_cells(k: usize) -> impl Strategy<Value = (GridMap, Vec<Cell>)> {
    (3usize..=6, 3usize..=6)
        .prop_flat_map(|(w, h)| {
            (Just(w), Just(h), prop::collection::vec(prop::bool::weighted(0.15), w * h))
        })
        .prop_filter_map("map too cramped", move |(w, h, blocked)| {
            let walls: Vec<Cell> = blocked
                .iter()
                .enumerate()
                .filter(|&(_, &b)| b)
                .map(|(i, _)| Cell::new(i / w, i % w))
                .collect();
            let map = GridMap::open(w, h).with_obstacles(&walls);
            (map.passable_cells().len() > k).then_some(map)
        })
        .prop_flat_map(move |map| {
            let cells = map.passable_cells();
            (Just(map), prop::sample::subsequence(cells, k))
        })
}

fn actions(k: usize) -> impl Strategy<Value = Vec<MoveAction>> {
    prop::collection::vec(0usize..5, k)
        .prop_map(|ix| ix.into_iter().map(|i| MoveAction::ALL[i]).collect())
}

fn sup_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn resolved_moves_match_the_coordinate_oracle((map, cells) in grid_with_cells(1)) {
        let cell = cells[0];
        for action in MoveAction::ALL {
            let landed = map.resolve(cell, action);
            prop_assert_eq!(landed, common::resolve_move(&map, cell, action));
            match map.neighbor(cell, action) {
                Some(next) => prop_assert_eq!(next, landed),
                None => prop_assert_eq!(landed, cell),
            }
        }
    }

    #[test]
    fn simultaneous_steps_report_exactly_the_oracle_collisions(
        (map, cells) in grid_with_cells(6),
        moves in actions(3),
    ) {
        let state = JointState::new(cells[..3].to_vec());
        let goals = &cells[3..];
        let (next, pairs) = step(&map, goals, &state, &moves);

        let expected: Vec<Cell> = state
            .positions
            .iter()
            .zip(&moves)
            .map(|(&c, &a)| common::resolve_move(&map, c, a))
            .collect();
        prop_assert_eq!(&next.positions, &expected);
        prop_assert_eq!(pairs, common::joint_collisions(&state.positions, &expected));
        for i in 0..3 {
            prop_assert_eq!(next.arrived[i], expected[i] == goals[i]);
        }
    }

    #[test]
    fn safe_rule_picks_from_the_oracle_safe_set((map, cells) in grid_with_cells(4)) {
        let state = JointState::new(cells[..3].to_vec());
        let field = bfs_distance(&map, cells[3]).unwrap();
        let others = uniform_move_dists(&map, &state, 0);
        let chosen = safe_move(&map, &state, 0, &field, &others);
        let oracle = common::safe_action_set(&map, &state, 0);
        if !oracle.is_empty() {
            prop_assert!(
                oracle.contains(&chosen),
                "chose {:?} outside the safe set {:?}",
                chosen,
                oracle
            );
        }
    }

    #[test]
    fn belief_updates_keep_distributions_normalized(
        (map, cells) in grid_with_cells(4),
        observed in actions(2),
        pick in 0usize..3,
        b in 0.2f64..4.0,
        epsilon in 0.0f64..0.4,
    ) {
        let map = Arc::new(map);
        let state = JointState::new(cells[..3].to_vec());
        let beta = match pick {
            0 => BeliefTemperature::Beta(1.0),
            1 => BeliefTemperature::Beta(b),
            _ => BeliefTemperature::HardMax,
        };
        let prior = init_belief(&map, &[1, 2], cells[3], epsilon, false);
        let posterior = update(&prior, &state, &observed, beta);
        for slot in 0..2 {
            let probs = posterior.probs(slot);
            prop_assert_eq!(probs.len(), prior.probs(slot).len());
            let mut sum = 0.0;
            for &p in probs {
                prop_assert!(p >= 0.0, "negative probability {}", p);
                sum += p;
            }
            prop_assert!((sum - 1.0).abs() < 1e-9, "slot {} sums to {}", slot, sum);
        }
    }

    #[test]
    fn point_mass_beliefs_reproduce_the_chosen_hypothesis(
        (map, cells) in grid_with_cells(3),
        pick in any::<prop::sample::Index>(),
    ) {
        let map = Arc::new(map);
        let state = JointState::new(cells[..2].to_vec());
        let prior = init_belief(&map, &[1], cells[2], 0.1, false);
        let idx = pick.index(prior.hypothesis_set().len());
        let point = prior.point_mass(&[idx]);
        let dist = joint_action_dist(&point, &state);
        let policy = &point.hypothesis_set().policies()[idx];
        prop_assert_eq!(*dist.marginal(0), policy.action_dist(&map, state.positions[1]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn bellman_backups_contract_value_vectors(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = common::random_mdp(&mut rng, 6, 3, 0.9);
        let n = mdp.n_states();
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let lhs = sup_norm_diff(&bellman_backup(&mdp, &u), &bellman_backup(&mdp, &v));
        prop_assert!(lhs <= 0.9 * sup_norm_diff(&u, &v) + 1e-12);
    }

    #[test]
    fn value_iteration_lands_on_a_bellman_fixed_point(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = common::random_mdp(&mut rng, 6, 3, 0.9);
        let tol = 1e-9;
        let sol = value_iteration(&mdp, tol);
        let backed = bellman_backup(&mdp, &sol.values);
        prop_assert!(sup_norm_diff(&backed, &sol.values) < tol);
        for s in 0..mdp.n_states() {
            let row = &sol.q[s];
            let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((sol.values[s] - best).abs() < tol);
            prop_assert_eq!(sol.policy[s], row.iter().position(|&q| q == best).unwrap());
        }
    }

    #[test]
    fn brute_force_policy_enumeration_agrees_with_value_iteration(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = common::random_mdp(&mut rng, 4, 2, 0.85);
        let sol = value_iteration(&mdp, 1e-10);
        let brute = common::enumerated_optimal_values(&mdp);
        prop_assert!(sup_norm_diff(&sol.values, &brute) < 1e-7);
    }
}

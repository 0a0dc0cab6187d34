//! Opponent models: the hypothesis policy space used for belief
//! tracking, and the scripted agents that populate benchmark episodes.
//!
//! A hypothesis attributes to an opponent an ε-softened greedy walk
//! toward one hypothesized goal cell: with mass 1−ε it takes a move
//! that strictly decreases the shortest distance to that goal (ties
//! split uniformly), with mass ε it takes any other valid move
//! including `Stay`. Keeping the ε mass over the whole remaining valid
//! set gives every valid move positive probability, which the Bayes
//! update needs to stay well defined.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{bfs_distance, Cell, DistanceField, GridMap, JointState, MoveAction};
use crate::safe_rule::{self, uniform_move_dists};

/// One opponent type π_j^k: greedy walk toward `goal` softened by
/// `epsilon`.
#[derive(Debug, Clone)]
pub struct HypothesisPolicy {
    pub goal: Cell,
    pub epsilon: f64,
    field: Arc<DistanceField>,
}

impl HypothesisPolicy {
    pub fn new(map: &GridMap, goal: Cell, epsilon: f64) -> Result<Self, crate::env::MapError> {
        Ok(HypothesisPolicy { goal, epsilon, field: Arc::new(bfs_distance(map, goal)?) })
    }

    pub fn distance_field(&self) -> &DistanceField {
        &self.field
    }

    /// Probability of each move at `cell`, indexed per
    /// [`MoveAction::ALL`].
    pub fn action_dist(&self, map: &GridMap, cell: Cell) -> [f64; 5] {
        debug_assert!(map.is_passable(cell), "action_dist on obstacle cell {cell}");
        let mut dist = [0.0; 5];
        if cell == self.goal {
            dist[MoveAction::Stay.index()] = 1.0;
            return dist;
        }

        let d = self.field.get(cell);
        let mut shortest = [false; 5];
        let mut valid = [false; 5];
        let mut n_shortest = 0usize;
        let mut n_other = 0usize;
        for action in MoveAction::ALL {
            let i = action.index();
            match map.neighbor(cell, action) {
                Some(next) => {
                    valid[i] = true;
                    if d != DistanceField::INFINITE && self.field.get(next) + 1 == d {
                        shortest[i] = true;
                        n_shortest += 1;
                    } else {
                        n_other += 1;
                    }
                }
                None => {}
            }
        }

        if d == DistanceField::INFINITE || n_shortest == 0 {
            // Unreachable hypothesized goal: nothing to walk toward.
            let n_valid = (n_shortest + n_other) as f64;
            for action in MoveAction::ALL {
                if valid[action.index()] {
                    dist[action.index()] = 1.0 / n_valid;
                }
            }
            return dist;
        }

        for action in MoveAction::ALL {
            let i = action.index();
            if shortest[i] {
                dist[i] = (1.0 - self.epsilon) / n_shortest as f64;
            } else if valid[i] {
                dist[i] = self.epsilon / n_other as f64;
            }
        }
        dist
    }
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("unknown opponent spec `{0}`")]
    Unknown(String),
    #[error("bad probability in `{0}` (want a number in [0,1])")]
    BadProbability(String),
}

/// Which scripted agent drives an opponent slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OpponentSpec {
    ShortestPath,
    Random(f64),
    Safe,
    Chasing(f64),
}

impl OpponentSpec {
    /// Parses the spec grammar: `sp`, `rand:0.3`, `safe`, `chase:0.5`.
    pub fn parse(text: &str) -> Result<Self, SpecError> {
        let (kind, arg) = match text.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (text, None),
        };
        let prob = |arg: Option<&str>| -> Result<f64, SpecError> {
            let raw = arg.ok_or_else(|| SpecError::BadProbability(text.into()))?;
            let p: f64 = raw.parse().map_err(|_| SpecError::BadProbability(text.into()))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(SpecError::BadProbability(text.into()));
            }
            Ok(p)
        };
        match kind {
            "sp" => Ok(OpponentSpec::ShortestPath),
            "safe" => Ok(OpponentSpec::Safe),
            "rand" => Ok(OpponentSpec::Random(prob(arg)?)),
            "chase" => Ok(OpponentSpec::Chasing(prob(arg)?)),
            _ => Err(SpecError::Unknown(text.into())),
        }
    }
}

impl fmt::Display for OpponentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpponentSpec::ShortestPath => write!(f, "sp"),
            OpponentSpec::Random(p) => write!(f, "rand:{p}"),
            OpponentSpec::Safe => write!(f, "safe"),
            OpponentSpec::Chasing(p) => write!(f, "chase:{p}"),
        }
    }
}

/// First distance-decreasing move in tie-break order, `Stay` at the
/// goal or when the goal is unreachable.
pub fn shortest_path_move(map: &GridMap, field: &DistanceField, from: Cell) -> MoveAction {
    let d = field.get(from);
    if d == 0 || d == DistanceField::INFINITE {
        return MoveAction::Stay;
    }
    for action in &MoveAction::ALL[..4] {
        if let Some(next) = map.neighbor(from, *action) {
            if field.get(next) + 1 == d {
                return *action;
            }
        }
    }
    MoveAction::Stay
}

fn uniform_valid_move(map: &GridMap, from: Cell, rng: &mut ChaCha8Rng) -> MoveAction {
    let valid: Vec<MoveAction> =
        MoveAction::ALL.into_iter().filter(|a| map.neighbor(from, *a).is_some()).collect();
    valid[rng.gen_range(0..valid.len())]
}

/// A scripted agent driving one opponent slot for a whole episode.
pub trait OpponentAgent {
    fn act(&mut self, state: &JointState) -> MoveAction;
}

struct ShortestPathAgent {
    map: Arc<GridMap>,
    field: DistanceField,
    index: usize,
}

impl OpponentAgent for ShortestPathAgent {
    fn act(&mut self, state: &JointState) -> MoveAction {
        shortest_path_move(&self.map, &self.field, state.positions[self.index])
    }
}

struct RandomAgent {
    map: Arc<GridMap>,
    field: DistanceField,
    index: usize,
    p: f64,
    rng: ChaCha8Rng,
}

impl OpponentAgent for RandomAgent {
    fn act(&mut self, state: &JointState) -> MoveAction {
        let here = state.positions[self.index];
        if self.rng.gen_bool(self.p) {
            uniform_valid_move(&self.map, here, &mut self.rng)
        } else {
            shortest_path_move(&self.map, &self.field, here)
        }
    }
}

struct SafeOpponent {
    map: Arc<GridMap>,
    field: DistanceField,
    index: usize,
}

impl OpponentAgent for SafeOpponent {
    fn act(&mut self, state: &JointState) -> MoveAction {
        // A scripted safe agent has no belief over the others; the
        // no-safe-action corner uses uniform move models instead.
        let dists = uniform_move_dists(&self.map, state, self.index);
        safe_rule::safe_move(&self.map, state, self.index, &self.field, &dists)
    }
}

struct ChasingAgent {
    map: Arc<GridMap>,
    own_field: DistanceField,
    index: usize,
    target: usize,
    p: f64,
    rng: ChaCha8Rng,
    chase_cache: Option<(Cell, DistanceField)>,
}

impl ChasingAgent {
    fn chase_move(&mut self, state: &JointState) -> MoveAction {
        let target_cell = state.positions[self.target];
        let stale = !matches!(&self.chase_cache, Some((c, _)) if *c == target_cell);
        if stale {
            let field = bfs_distance(&self.map, target_cell)
                .expect("target stands on a passable cell");
            self.chase_cache = Some((target_cell, field));
        }
        let (_, field) = self.chase_cache.as_ref().unwrap();
        shortest_path_move(&self.map, field, state.positions[self.index])
    }
}

impl OpponentAgent for ChasingAgent {
    fn act(&mut self, state: &JointState) -> MoveAction {
        if self.rng.gen_bool(self.p) {
            self.chase_move(state)
        } else {
            shortest_path_move(&self.map, &self.own_field, state.positions[self.index])
        }
    }
}

/// Instantiates the scripted agent for one opponent slot. `rng` must be
/// private to this agent (one stream per slot).
pub fn build_opponent(
    spec: OpponentSpec,
    map: Arc<GridMap>,
    index: usize,
    goal: Cell,
    modelling_index: usize,
    rng: ChaCha8Rng,
) -> Box<dyn OpponentAgent> {
    let field = bfs_distance(&map, goal).expect("opponent goal is passable");
    match spec {
        OpponentSpec::ShortestPath => Box::new(ShortestPathAgent { map, field, index }),
        OpponentSpec::Random(p) => Box::new(RandomAgent { map, field, index, p, rng }),
        OpponentSpec::Safe => Box::new(SafeOpponent { map, field, index }),
        OpponentSpec::Chasing(p) => Box::new(ChasingAgent {
            map,
            own_field: field,
            index,
            target: modelling_index,
            p,
            rng,
            chase_cache: None,
        }),
    }
}

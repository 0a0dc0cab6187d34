//! The route-planning environment: maps, moves, joint states and the
//! simultaneous transition rule.

mod grid;
mod state;

pub use grid::{bfs_distance, state_count, Cell, DistanceField, GridMap, MapError, MoveAction};
pub use state::{step, step_with, JointState, StepRules};

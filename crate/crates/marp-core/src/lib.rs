//! Multi-agent route planning on grid maps against uncertain opponents.
//!
//! The crate is organized around one modelling agent that plans in a
//! grid world shared with opponents whose goals and behaviour it does
//! not know. It maintains a belief over opponent hypotheses, induces
//! single-agent MDPs from that belief, and plans with a family of
//! methods ranging from reactive collision-avoidance rules to tree
//! search with learned-free opponent models:
//!
//! - [`env`]: grid maps, joint states, simultaneous-move dynamics.
//! - [`opponents`]: scripted opponent behaviours and the softened
//!   shortest-path hypothesis policies used for modelling.
//! - [`belief`]: per-opponent posteriors over hypotheses.
//! - [`model`]: the modelling agent's view of dynamics and rewards.
//! - [`solvers`]: induced MDPs, value iteration, QMDP action selection.
//! - [`ne_oracle`]: space-time A* and conflict-based search used as a
//!   joint-plan evaluator.
//! - [`planners`]: the planner zoo behind one trait, built from spec
//!   strings such as `qmdp` or `mcts:sel=puct,budget=50,eval=cbs`.
//! - [`harness`]: episode runner, benchmark suites, CSV reporting.

pub mod belief;
pub mod env;
pub mod harness;
pub mod model;
pub mod ne_oracle;
pub mod opponents;
pub mod planners;
pub mod rng;
pub mod safe_rule;
pub mod scenario;
pub mod solvers;

pub use belief::{
    detect_stationary, init_belief, joint_action_dist, update, Belief, BeliefTemperature,
    HypothesisSet, JointActionDist,
};
pub use env::{
    bfs_distance, state_count, step, step_with, Cell, DistanceField, GridMap, JointState,
    MapError, MoveAction, StepRules,
};
pub use model::{AgentModel, ModelOutcome, RewardParams, DEFAULT_GAMMA};
pub use opponents::{build_opponent, HypothesisPolicy, OpponentAgent, OpponentSpec};
pub use rng::{rng_for, Stream};
pub use scenario::{
    generate_scenario, scenario_to_text, GenParams, ObstacleSpec, OpponentPool, Scenario,
    ScenarioError, ScenarioFile,
};

//! The planner suite: one interface over the rule-based agents, the
//! induced-MDP family, the committed-plan agents and the two
//! opponent-modelling tree searches.
//!
//! A planner is built from a [`PlannerSpec`] (the CLI grammar) and a
//! [`PlannerView`] of one scenario. It owns its belief, its RNG stream
//! and whatever solved artifacts it needs; `reset` restores the
//! freshly-built state so the same instance can replay its episode.

use std::f64::consts::SQRT_2;
use std::fmt;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::belief::{
    init_belief, joint_action_dist, update, Belief, BeliefTemperature,
};
use crate::env::{
    bfs_distance, Cell, DistanceField, GridMap, JointState, MapError, MoveAction,
};
use crate::model::{AgentModel, RewardParams, DEFAULT_GAMMA};
use crate::ne_oracle::CbsLimits;
use crate::rng::{rng_for, Stream};
use crate::safe_rule::{safe_move, OtherMover};
use crate::scenario::Scenario;
use crate::solvers::{SolverError, DEFAULT_CONTEXT_CAP, DEFAULT_STATE_CAP, DEFAULT_VI_TOL};

pub mod eval;
mod mcts;
mod mdp;
mod rules;
mod uniform;

pub use eval::Evaluator;
pub use uniform::{SearchExhausted, UtsSearch};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("bad planner spec `{spec}`: {msg}")]
    Spec { spec: String, msg: String },
    #[error("planner construction failed: {0}")]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Map(#[from] MapError),
}

/// Default exploration constants for the tree searches.
pub const UCT_C: f64 = SQRT_2;
pub const PUCT_C1: f64 = 1.25;
pub const PUCT_C2: f64 = 19625.0;

/// Knobs shared by the search planners. The harness fills them per
/// scenario family; spec strings override the fields they name.
#[derive(Debug, Clone)]
pub struct Tunables {
    /// Belief-updated lookahead depth for the uniform tree search.
    pub depth: usize,
    /// Plan samples per leaf evaluation.
    pub eval_samples: usize,
    /// Hypothesis draws forming the mean opponent policy at MCTS
    /// expectation nodes.
    pub select_samples: usize,
    /// Sampled-backup draws per expectation node in the uniform search.
    pub backup_samples: usize,
    /// MCTS iteration budget.
    pub max_iter: usize,
    /// Stationary-detection window of the enhanced safe rule.
    pub esafe_k: usize,
    /// Suboptimality slack of bounded-CBS leaf evaluation.
    pub suboptimality: f64,
    /// Search caps for the oracle solves inside evaluations.
    pub cbs_limits: CbsLimits,
    pub state_cap: usize,
    pub context_cap: usize,
    pub vi_tol: f64,
    /// Expanded-node budget for one uniform tree search call.
    pub node_cap: usize,
}

impl Default for Tunables {
    fn default() -> Self {
        Tunables {
            depth: 2,
            eval_samples: 10,
            select_samples: 50,
            backup_samples: 10,
            max_iter: 50,
            esafe_k: 3,
            suboptimality: 0.2,
            cbs_limits: CbsLimits::evaluation(),
            state_cap: DEFAULT_STATE_CAP,
            context_cap: DEFAULT_CONTEXT_CAP,
            vi_tol: DEFAULT_VI_TOL,
            node_cap: 200_000,
        }
    }
}

/// Everything a planner may know about its scenario: the map, its own
/// slot, the shared hypothesis noise, and the tuning knobs. Opponent
/// goals are deliberately absent.
#[derive(Debug, Clone)]
pub struct PlannerView {
    pub map: Arc<GridMap>,
    pub own_index: usize,
    pub own_goal: Cell,
    pub opponent_indices: Vec<usize>,
    pub initial: JointState,
    pub epsilon: f64,
    pub rewards: RewardParams,
    pub gamma: f64,
    pub seed: u64,
    pub tunables: Tunables,
}

impl PlannerView {
    /// View for agent `own_index` of `scenario`. In self-play every
    /// agent gets its own view; the benchmark default is the modelling
    /// index.
    pub fn from_scenario(scenario: &Scenario, own_index: usize, seed: u64) -> Self {
        PlannerView {
            map: scenario.map.clone(),
            own_index,
            own_goal: scenario.goals[own_index],
            opponent_indices: (0..scenario.agent_count()).filter(|&i| i != own_index).collect(),
            initial: scenario.initial_state(),
            epsilon: scenario.epsilon,
            rewards: RewardParams::default(),
            gamma: DEFAULT_GAMMA,
            seed,
            tunables: Tunables::default(),
        }
    }

    pub fn model(&self) -> AgentModel {
        let mut model = AgentModel::new(self.map.clone(), self.own_index, self.own_goal);
        model.rewards = self.rewards;
        model.gamma = self.gamma;
        model
    }

    pub fn fresh_belief(&self) -> Belief {
        init_belief(&self.map, &self.opponent_indices, self.own_goal, self.epsilon, false)
    }
}

/// Behavior contract of every planner. `observe` is called once per
/// environment step with the pre-step state and the resolved moves of
/// all agents; `act` must be deterministic given the internal state.
pub trait Planner {
    /// Restores the freshly-built state (belief, RNG stream, counters).
    fn reset(&mut self);
    fn act(&mut self, state: &JointState) -> MoveAction;
    fn observe(&mut self, state: &JointState, actions: &[MoveAction]);
    /// Steps on which the planner degraded to the safe rule.
    fn fallbacks(&self) -> u32;
}

/// Leaf evaluator choices for the tree searches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalKind {
    Zero,
    ShortestPath,
    Cbs,
    Qmdp,
}

impl EvalKind {
    fn parse(text: &str) -> Option<EvalKind> {
        match text {
            "zero" => Some(EvalKind::Zero),
            "sp" => Some(EvalKind::ShortestPath),
            "cbs" => Some(EvalKind::Cbs),
            "qmdp" => Some(EvalKind::Qmdp),
            _ => None,
        }
    }
}

impl fmt::Display for EvalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalKind::Zero => "zero",
            EvalKind::ShortestPath => "sp",
            EvalKind::Cbs => "cbs",
            EvalKind::Qmdp => "qmdp",
        })
    }
}

/// Belief-fixed lookahead depth: a number of levels, or the marker that
/// solves the induced MDP at the belief-update frontier instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthBound {
    Finite(usize),
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BackupRule {
    Exact,
    /// `None` takes the per-family default sample count.
    Sampled(Option<usize>),
}

/// Selection rule at decision nodes; the uniform search uses `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionRule {
    None,
    Uct { c: f64 },
    Puct { c1: f64, c2: f64 },
}

/// Resolved tree-search configuration shared by both searches.
#[derive(Debug, Clone)]
pub struct TsConfig {
    pub n: usize,
    pub m: DepthBound,
    pub eval: EvalKind,
    pub backup: BackupRule,
    pub selection: SelectionRule,
    pub budget: usize,
    pub select_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MctsSelection {
    Uct,
    Puct,
}

/// Parsed planner spec, mirroring the CLI grammar:
/// `astar`, `safe`, `esafe:K=3`, `mdp:fixed`, `mdp:update`, `qmdp`,
/// `cbs:fixed`, `cbs:update`,
/// `uts:n=2,m=0,eval=cbs,backup=exact` (`m=inf` allowed,
/// `backup=sampled` or `backup=sampled8`),
/// `mcts:sel=puct,budget=50,eval=cbs` (optional `samples=K`).
/// Omitted numeric fields take the per-family defaults at build time.
#[derive(Debug, Clone, PartialEq)]
pub enum PlannerSpec {
    Astar,
    Safe,
    EnhancedSafe { k: Option<usize> },
    Mdp { update: bool },
    Qmdp,
    CbsPlan { update: bool },
    UniformTs { n: Option<usize>, m: Option<DepthBound>, eval: EvalKind, backup: BackupRule },
    Mcts { selection: MctsSelection, budget: Option<usize>, eval: EvalKind, samples: Option<usize> },
}

impl PlannerSpec {
    pub fn parse(text: &str) -> Result<Self, PlannerError> {
        let bad = |msg: String| PlannerError::Spec { spec: text.into(), msg };
        let (head, rest) = match text.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (text, None),
        };
        let no_args = |spec: PlannerSpec| match rest {
            Some(_) => Err(bad("takes no arguments".into())),
            None => Ok(spec),
        };
        let kv_pairs = |rest: &'_ str| -> Result<Vec<(String, String)>, PlannerError> {
            rest.split(',')
                .map(|pair| {
                    pair.split_once('=')
                        .map(|(k, v)| (k.to_string(), v.to_string()))
                        .ok_or_else(|| bad(format!("expected key=value, got `{pair}`")))
                })
                .collect()
        };
        let number = |key: &str, value: &str| -> Result<usize, PlannerError> {
            value.parse().map_err(|_| bad(format!("bad value for {key}: `{value}`")))
        };

        match head {
            "astar" => no_args(PlannerSpec::Astar),
            "safe" => no_args(PlannerSpec::Safe),
            "esafe" => {
                let mut k = None;
                for (key, value) in rest.map(kv_pairs).transpose()?.unwrap_or_default() {
                    match key.as_str() {
                        "K" => k = Some(number("K", &value)?),
                        other => return Err(bad(format!("unknown key `{other}`"))),
                    }
                }
                Ok(PlannerSpec::EnhancedSafe { k })
            }
            "mdp" => match rest {
                Some("fixed") => Ok(PlannerSpec::Mdp { update: false }),
                Some("update") => Ok(PlannerSpec::Mdp { update: true }),
                _ => Err(bad("want mdp:fixed or mdp:update".into())),
            },
            "qmdp" => no_args(PlannerSpec::Qmdp),
            "cbs" => match rest {
                Some("fixed") => Ok(PlannerSpec::CbsPlan { update: false }),
                Some("update") => Ok(PlannerSpec::CbsPlan { update: true }),
                _ => Err(bad("want cbs:fixed or cbs:update".into())),
            },
            "uts" => {
                let (mut n, mut m) = (None, None);
                let mut eval = EvalKind::Cbs;
                let mut backup = BackupRule::Exact;
                for (key, value) in rest.map(kv_pairs).transpose()?.unwrap_or_default() {
                    match key.as_str() {
                        "n" => n = Some(number("n", &value)?),
                        "m" if value == "inf" => m = Some(DepthBound::Infinite),
                        "m" => m = Some(DepthBound::Finite(number("m", &value)?)),
                        "eval" => {
                            eval = EvalKind::parse(&value)
                                .ok_or_else(|| bad(format!("unknown eval `{value}`")))?
                        }
                        "backup" if value == "exact" => backup = BackupRule::Exact,
                        "backup" => {
                            let digits = value
                                .strip_prefix("sampled")
                                .ok_or_else(|| bad(format!("unknown backup `{value}`")))?;
                            backup = BackupRule::Sampled(if digits.is_empty() {
                                None
                            } else {
                                Some(number("backup", digits)?)
                            });
                        }
                        other => return Err(bad(format!("unknown key `{other}`"))),
                    }
                }
                Ok(PlannerSpec::UniformTs { n, m, eval, backup })
            }
            "mcts" => {
                let mut selection = MctsSelection::Uct;
                let mut budget = None;
                let mut eval = EvalKind::Cbs;
                let mut samples = None;
                for (key, value) in rest.map(kv_pairs).transpose()?.unwrap_or_default() {
                    match key.as_str() {
                        "sel" => {
                            selection = match value.as_str() {
                                "uct" => MctsSelection::Uct,
                                "puct" => MctsSelection::Puct,
                                other => return Err(bad(format!("unknown selection `{other}`"))),
                            }
                        }
                        "budget" => budget = Some(number("budget", &value)?),
                        "eval" => {
                            eval = EvalKind::parse(&value)
                                .ok_or_else(|| bad(format!("unknown eval `{value}`")))?
                        }
                        "samples" => samples = Some(number("samples", &value)?),
                        other => return Err(bad(format!("unknown key `{other}`"))),
                    }
                }
                Ok(PlannerSpec::Mcts { selection, budget, eval, samples })
            }
            other => Err(bad(format!("unknown planner `{other}`"))),
        }
    }

    /// Tree-search configuration with per-family defaults filled in;
    /// `None` for the non-search planners.
    pub fn ts_config(&self, t: &Tunables) -> Option<TsConfig> {
        match *self {
            PlannerSpec::UniformTs { n, m, eval, backup } => Some(TsConfig {
                n: n.unwrap_or(t.depth),
                m: m.unwrap_or(DepthBound::Finite(0)),
                eval,
                backup: match backup {
                    BackupRule::Sampled(None) => BackupRule::Sampled(Some(t.backup_samples)),
                    other => other,
                },
                selection: SelectionRule::None,
                budget: t.node_cap,
                select_samples: t.select_samples,
            }),
            PlannerSpec::Mcts { selection, budget, eval, samples } => Some(TsConfig {
                n: 0,
                m: DepthBound::Infinite,
                eval,
                backup: BackupRule::Sampled(Some(1)),
                selection: match selection {
                    MctsSelection::Uct => SelectionRule::Uct { c: UCT_C },
                    MctsSelection::Puct => SelectionRule::Puct { c1: PUCT_C1, c2: PUCT_C2 },
                },
                budget: budget.unwrap_or(t.max_iter),
                select_samples: samples.unwrap_or(t.select_samples),
            }),
            _ => None,
        }
    }
}

impl fmt::Display for PlannerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlannerSpec::Astar => write!(f, "astar"),
            PlannerSpec::Safe => write!(f, "safe"),
            PlannerSpec::EnhancedSafe { k: None } => write!(f, "esafe"),
            PlannerSpec::EnhancedSafe { k: Some(k) } => write!(f, "esafe:K={k}"),
            PlannerSpec::Mdp { update } => {
                write!(f, "mdp:{}", if *update { "update" } else { "fixed" })
            }
            PlannerSpec::Qmdp => write!(f, "qmdp"),
            PlannerSpec::CbsPlan { update } => {
                write!(f, "cbs:{}", if *update { "update" } else { "fixed" })
            }
            PlannerSpec::UniformTs { n, m, eval, backup } => {
                write!(f, "uts:")?;
                let mut sep = "";
                if let Some(n) = n {
                    write!(f, "n={n}")?;
                    sep = ",";
                }
                match m {
                    Some(DepthBound::Finite(m)) => {
                        write!(f, "{sep}m={m}")?;
                        sep = ",";
                    }
                    Some(DepthBound::Infinite) => {
                        write!(f, "{sep}m=inf")?;
                        sep = ",";
                    }
                    None => {}
                }
                write!(f, "{sep}eval={eval},backup=")?;
                match backup {
                    BackupRule::Exact => write!(f, "exact"),
                    BackupRule::Sampled(None) => write!(f, "sampled"),
                    BackupRule::Sampled(Some(k)) => write!(f, "sampled{k}"),
                }
            }
            PlannerSpec::Mcts { selection, budget, eval, samples } => {
                let sel = match selection {
                    MctsSelection::Uct => "uct",
                    MctsSelection::Puct => "puct",
                };
                write!(f, "mcts:sel={sel}")?;
                if let Some(b) = budget {
                    write!(f, ",budget={b}")?;
                }
                write!(f, ",eval={eval}")?;
                if let Some(s) = samples {
                    write!(f, ",samples={s}")?;
                }
                Ok(())
            }
        }
    }
}

/// Builds the planner an episode will run. Capacity errors from the
/// solves some planners do up front surface here, so a failed
/// construction can be recorded without crashing a suite.
pub fn build_planner(
    spec: &PlannerSpec,
    view: &PlannerView,
) -> Result<Box<dyn Planner>, PlannerError> {
    match spec {
        PlannerSpec::Astar => Ok(Box::new(rules::AstarPlanner::new(view)?)),
        PlannerSpec::Safe => Ok(Box::new(rules::SafePlanner::new(view)?)),
        PlannerSpec::EnhancedSafe { k } => Ok(Box::new(rules::EnhancedSafePlanner::new(
            view,
            k.unwrap_or(view.tunables.esafe_k),
        )?)),
        PlannerSpec::Mdp { update } => Ok(Box::new(mdp::MdpPlanner::new(view, *update)?)),
        PlannerSpec::Qmdp => Ok(Box::new(mdp::QmdpPlanner::new(view)?)),
        PlannerSpec::CbsPlan { update } => Ok(Box::new(mdp::CbsPlanner::new(view, *update)?)),
        PlannerSpec::UniformTs { .. } => {
            let cfg = spec.ts_config(&view.tunables).expect("uts spec has a config");
            Ok(Box::new(uniform::UtsPlanner::new(view, cfg)?))
        }
        PlannerSpec::Mcts { .. } => {
            let cfg = spec.ts_config(&view.tunables).expect("mcts spec has a config");
            Ok(Box::new(mcts::MctsPlanner::new(view, cfg)?))
        }
    }
}

/// First maximal score in move order.
pub(crate) fn argmax_action(scores: &[f64; 5]) -> MoveAction {
    let mut best = 0;
    for i in 1..5 {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    MoveAction::ALL[best]
}

/// State shared by every belief-carrying planner: the scenario view,
/// the model, the running belief, the own-goal distance field, a
/// private RNG stream and the fallback counter.
pub(crate) struct PlannerBase {
    pub view: PlannerView,
    pub model: AgentModel,
    pub belief: Belief,
    pub field: DistanceField,
    pub rng: ChaCha8Rng,
    pub fallbacks: u32,
}

impl PlannerBase {
    pub fn new(view: &PlannerView) -> Result<Self, PlannerError> {
        let field = bfs_distance(&view.map, view.own_goal)?;
        Ok(PlannerBase {
            model: view.model(),
            belief: view.fresh_belief(),
            field,
            rng: rng_for(view.seed, Stream::Planner, view.own_index as u64),
            fallbacks: 0,
            view: view.clone(),
        })
    }

    pub fn reset(&mut self) {
        self.belief = self.view.fresh_belief();
        self.rng = rng_for(self.view.seed, Stream::Planner, self.view.own_index as u64);
        self.fallbacks = 0;
    }

    /// Bayes update from one full joint action vector (resolved moves).
    pub fn observe_update(&mut self, state: &JointState, actions: &[MoveAction]) {
        let observed: Vec<MoveAction> =
            self.view.opponent_indices.iter().map(|&j| actions[j]).collect();
        self.belief = update(&self.belief, state, &observed, BeliefTemperature::EXACT);
    }

    /// Movers for the safe rule with belief-mean move models.
    pub fn belief_movers(&self, state: &JointState) -> Vec<OtherMover> {
        let dist = joint_action_dist(&self.belief, state);
        self.belief
            .opponents()
            .iter()
            .enumerate()
            .map(|(slot, &index)| OtherMover { index, move_dist: *dist.marginal(slot) })
            .collect()
    }

    /// Degraded move for a search planner that ran out of budget or met
    /// a state it cannot explain: keep the episode alive on the safe
    /// rule, log it, count it.
    pub fn safe_fallback(&mut self, state: &JointState, why: &str) -> MoveAction {
        self.fallbacks += 1;
        log::warn!("agent {} falls back to the safe rule: {why}", self.view.own_index);
        let movers = self.belief_movers(state);
        safe_move(&self.view.map, state, self.view.own_index, &self.field, &movers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_strings_roundtrip() {
        for text in [
            "astar",
            "safe",
            "esafe:K=3",
            "mdp:fixed",
            "mdp:update",
            "qmdp",
            "cbs:fixed",
            "cbs:update",
            "uts:n=2,m=0,eval=cbs,backup=exact",
            "uts:n=1,m=inf,eval=qmdp,backup=sampled8",
            "mcts:sel=puct,budget=50,eval=cbs",
            "mcts:sel=uct,budget=30,eval=sp,samples=20",
        ] {
            let spec = PlannerSpec::parse(text).unwrap();
            assert_eq!(spec.to_string(), text, "canonical form of `{text}`");
        }
    }

    #[test]
    fn bad_specs_are_rejected() {
        for text in [
            "walk",
            "astar:fast",
            "mdp",
            "mdp:both",
            "cbs",
            "uts:n=two",
            "uts:depth=2",
            "mcts:sel=greedy",
            "esafe:K=",
        ] {
            assert!(PlannerSpec::parse(text).is_err(), "`{text}` should not parse");
        }
    }

    #[test]
    fn ts_config_fills_family_defaults() {
        let t = Tunables { depth: 3, backup_samples: 7, max_iter: 42, ..Tunables::default() };
        let uts = PlannerSpec::parse("uts:eval=cbs,backup=sampled").unwrap();
        let cfg = uts.ts_config(&t).unwrap();
        assert_eq!(cfg.n, 3);
        assert_eq!(cfg.m, DepthBound::Finite(0));
        assert_eq!(cfg.backup, BackupRule::Sampled(Some(7)));

        let mcts = PlannerSpec::parse("mcts:sel=uct,eval=cbs").unwrap();
        let cfg = mcts.ts_config(&t).unwrap();
        assert_eq!(cfg.budget, 42);
        assert!(matches!(cfg.selection, SelectionRule::Uct { .. }));
    }

    #[test]
    fn argmax_prefers_earlier_moves_on_ties() {
        assert_eq!(argmax_action(&[1.0, 1.0, 0.0, 0.0, 0.0]), MoveAction::Up);
        assert_eq!(argmax_action(&[0.0, 2.0, 2.0, 0.0, 0.0]), MoveAction::Down);
        assert_eq!(argmax_action(&[0.0; 5]), MoveAction::Up);
    }
}

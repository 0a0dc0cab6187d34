//! Running one episode: the modelling agent against scripted opponents,
//! or every agent running the same planner in self-play.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::env::{bfs_distance, step, JointState, MoveAction};
use crate::ne_oracle::{bounded_cbs, cbs, CbsError, CbsLimits};
use crate::opponents::{build_opponent, OpponentAgent, OpponentSpec};
use crate::planners::{build_planner, Planner, PlannerError, PlannerSpec, PlannerView, Tunables};
use crate::rng::{rng_for, Stream};
use crate::scenario::{OpponentPool, Scenario};

/// Who the modelling agent shares the map with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpponentClass {
    /// Self-interested scripted agents, drawn uniformly per slot.
    Rational,
    /// Chasers that hunt the modelling agent half the time.
    Malicious,
    /// Every agent runs the planner under test with a private belief.
    Selfplay,
}

impl OpponentClass {
    pub fn parse(text: &str) -> Option<OpponentClass> {
        match text {
            "rational" => Some(OpponentClass::Rational),
            "malicious" => Some(OpponentClass::Malicious),
            "selfplay" => Some(OpponentClass::Selfplay),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OpponentClass::Rational => "rational",
            OpponentClass::Malicious => "malicious",
            OpponentClass::Selfplay => "selfplay",
        }
    }

    /// Scenario generation pool for this class. Self-play scenarios get
    /// placeholder specs; the episode runner ignores them.
    pub fn pool(self) -> OpponentPool {
        match self {
            OpponentClass::Rational => OpponentPool::Rational,
            OpponentClass::Malicious => OpponentPool::Malicious { p: 0.5 },
            OpponentClass::Selfplay => OpponentPool::Fixed(vec![OpponentSpec::ShortestPath]),
        }
    }
}

impl std::fmt::Display for OpponentClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything one benchmark episode produced. `step_ms` is wall-clock
/// noise and is excluded from [`EpisodeRecord::fingerprint`]; all other
/// fields are a pure function of (scenario, planner spec, seed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub scenario: String,
    pub seed: u64,
    /// Pre-step state and the intended joint action, once per step.
    pub trajectory: Vec<(JointState, Vec<MoveAction>)>,
    /// Steps the modelling agent took until its goal or the episode end.
    pub modelling_path_length: usize,
    pub collided: bool,
    pub timed_out: bool,
    /// Planner wall-clock per step, milliseconds.
    pub step_ms: Vec<f64>,
    pub fallbacks: u32,
}

impl EpisodeRecord {
    /// Stable identity of the episode, excluding timing.
    pub fn fingerprint(&self) -> String {
        use std::fmt::Write as _;
        let mut out = format!(
            "{}|{}|{}|{}|{}|{}",
            self.scenario,
            self.seed,
            self.modelling_path_length,
            self.collided,
            self.timed_out,
            self.fallbacks
        );
        for (state, actions) in &self.trajectory {
            out.push('\n');
            for (i, &cell) in state.positions.iter().enumerate() {
                let _ = write!(out, "{},{},{};", cell.row, cell.col, u8::from(state.arrived[i]));
            }
            out.push('|');
            for action in actions {
                let _ = write!(out, "{}", action.index());
            }
        }
        out
    }

    pub fn reached_goal(&self) -> bool {
        !self.collided && !self.timed_out
    }
}

/// Runs the modelling agent once against its scenario's scripted
/// opponents. Fails only when the planner cannot be built; everything
/// that happens after construction is recorded, not raised.
pub fn run_episode(
    scenario: &Scenario,
    spec: &PlannerSpec,
    tunables: &Tunables,
    seed: u64,
) -> Result<EpisodeRecord, PlannerError> {
    let me = scenario.modelling_index;
    let mut view = PlannerView::from_scenario(scenario, me, seed);
    view.tunables = tunables.clone();
    let mut planner = build_planner(spec, &view)?;

    let opponent_indices = scenario.opponent_indices();
    let mut opponents: Vec<Box<dyn OpponentAgent>> = opponent_indices
        .iter()
        .zip(&scenario.opponent_specs)
        .map(|(&j, &os)| {
            build_opponent(
                os,
                scenario.map.clone(),
                j,
                scenario.goals[j],
                me,
                rng_for(seed, Stream::Opponent, j as u64),
            )
        })
        .collect();

    let n = scenario.agent_count();
    let mut record = EpisodeRecord {
        scenario: scenario.name.clone(),
        seed,
        trajectory: Vec::new(),
        modelling_path_length: 0,
        collided: false,
        timed_out: false,
        step_ms: Vec::new(),
        fallbacks: 0,
    };

    let mut state = scenario.initial_state();
    let mut reached = state.arrived[me];
    for t in 0..scenario.max_steps {
        if reached {
            break;
        }
        let clock = Instant::now();
        let own = planner.act(&state);
        record.step_ms.push(clock.elapsed().as_secs_f64() * 1e3);

        let mut actions = vec![MoveAction::Stay; n];
        actions[me] = own;
        for (slot, &j) in opponent_indices.iter().enumerate() {
            if !state.arrived[j] {
                actions[j] = opponents[slot].act(&state);
            }
        }

        let (next, collisions) = step(&scenario.map, &scenario.goals, &state, &actions);
        record.trajectory.push((state.clone(), actions.clone()));
        record.modelling_path_length = t + 1;

        // Colliding while stepping onto the goal still counts as a
        // collision, mirroring the reward model.
        if collisions.iter().any(|&(a, b)| a == me || b == me) {
            record.collided = true;
            break;
        }
        if next.arrived[me] {
            reached = true;
            break;
        }
        planner.observe(&state, &actions);
        state = next;
    }

    record.timed_out = !reached && !record.collided;
    record.fallbacks = planner.fallbacks();
    debug_assert!(record.modelling_path_length <= scenario.max_steps);
    Ok(record)
}

/// One self-play episode. Per-agent outcomes; an agent's slice of the
/// episode ends at its own arrival, so collisions someone else causes
/// afterwards at its parked cell do not count against it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelfplayRecord {
    pub scenario: String,
    pub seed: u64,
    pub trajectory: Vec<(JointState, Vec<MoveAction>)>,
    /// Per agent: arrival step, or the step its outcome froze at.
    pub finish: Vec<usize>,
    pub collided: Vec<bool>,
    pub timed_out: Vec<bool>,
    pub steps: usize,
    /// Total planner wall-clock across agents, milliseconds.
    pub planning_ms: f64,
    /// Planner invocations across agents and steps.
    pub plan_calls: usize,
    pub fallbacks: u32,
}

impl SelfplayRecord {
    /// Stable identity of the episode, excluding timing.
    pub fn fingerprint(&self) -> String {
        use std::fmt::Write as _;
        let mut out = format!("{}|{}|{}|{}", self.scenario, self.seed, self.steps, self.fallbacks);
        for k in 0..self.finish.len() {
            let _ = write!(
                out,
                ";{},{},{}",
                self.finish[k],
                u8::from(self.collided[k]),
                u8::from(self.timed_out[k])
            );
        }
        for (state, actions) in &self.trajectory {
            out.push('\n');
            for (i, &cell) in state.positions.iter().enumerate() {
                let _ = write!(out, "{},{},{};", cell.row, cell.col, u8::from(state.arrived[i]));
            }
            out.push('|');
            for action in actions {
                let _ = write!(out, "{}", action.index());
            }
        }
        out
    }
}

/// Runs every agent on the same planner spec, each with its own view,
/// belief and RNG stream. The episode runs until everyone has arrived,
/// metrics can no longer change, or the step cap.
pub fn run_selfplay(
    scenario: &Scenario,
    spec: &PlannerSpec,
    tunables: &Tunables,
    seed: u64,
) -> Result<SelfplayRecord, PlannerError> {
    let n = scenario.agent_count();
    let mut planners: Vec<Box<dyn Planner>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut view = PlannerView::from_scenario(scenario, k, seed);
        view.tunables = tunables.clone();
        planners.push(build_planner(spec, &view)?);
    }

    let mut record = SelfplayRecord {
        scenario: scenario.name.clone(),
        seed,
        trajectory: Vec::new(),
        finish: vec![scenario.max_steps; n],
        collided: vec![false; n],
        timed_out: vec![false; n],
        steps: 0,
        planning_ms: 0.0,
        plan_calls: 0,
        fallbacks: 0,
    };

    let mut state = scenario.initial_state();
    let mut done: Vec<bool> = (0..n).map(|k| state.arrived[k]).collect();
    for k in 0..n {
        if done[k] {
            record.finish[k] = 0;
        }
    }

    while record.steps < scenario.max_steps && done.iter().any(|&d| !d) {
        let mut actions = vec![MoveAction::Stay; n];
        let clock = Instant::now();
        for k in 0..n {
            if !state.arrived[k] {
                actions[k] = planners[k].act(&state);
                record.plan_calls += 1;
            }
        }
        record.planning_ms += clock.elapsed().as_secs_f64() * 1e3;

        let (next, collisions) = step(&scenario.map, &scenario.goals, &state, &actions);
        record.trajectory.push((state.clone(), actions.clone()));
        record.steps += 1;

        for &(a, b) in &collisions {
            for x in [a, b] {
                if !done[x] {
                    record.collided[x] = true;
                    record.finish[x] = record.steps;
                    done[x] = true;
                }
            }
        }
        for k in 0..n {
            if !done[k] && next.arrived[k] {
                record.finish[k] = record.steps;
                done[k] = true;
            }
        }
        for k in 0..n {
            if !state.arrived[k] {
                planners[k].observe(&state, &actions);
            }
        }
        state = next;
    }

    for k in 0..n {
        record.timed_out[k] = !done[k];
    }
    record.fallbacks = planners.iter().map(|p| p.fallbacks()).sum();
    Ok(record)
}

/// Path length with failures pushed to the family's cap: a collision or
/// timeout costs `upper_bound` steps.
pub fn penalized_length(record: &EpisodeRecord, upper_bound: usize) -> f64 {
    if record.collided || record.timed_out {
        upper_bound as f64
    } else {
        record.modelling_path_length as f64
    }
}

/// Per-agent penalized lengths of a self-play episode.
pub fn selfplay_penalized(record: &SelfplayRecord, upper_bound: usize) -> Vec<f64> {
    (0..record.finish.len())
        .map(|k| {
            if record.collided[k] || record.timed_out[k] {
                upper_bound as f64
            } else {
                record.finish[k] as f64
            }
        })
        .collect()
}

/// Path-length reference bounds for a batch of scenarios.
#[derive(Debug, Clone)]
pub struct Bounds {
    /// Mean of the per-scenario lower bounds.
    pub lower_mean: f64,
    pub lower_std: f64,
    pub upper: usize,
    /// Set when a joint solve hit its budget and a weaker estimate
    /// stood in for the exact one.
    pub approximate: bool,
}

/// Lower bounds come from ignoring the interaction: the modelling
/// agent's own shortest path against scripted opponents, or the optimal
/// conflict-free joint plan's mean cost in self-play.
pub fn compute_bounds(
    scenarios: &[Scenario],
    class: OpponentClass,
    upper: usize,
    suboptimality: f64,
    limits: &CbsLimits,
) -> Bounds {
    let mut approximate = false;
    let mut values = Vec::with_capacity(scenarios.len());
    for scenario in scenarios {
        match class {
            OpponentClass::Rational | OpponentClass::Malicious => {
                values.push(own_distance(scenario));
            }
            OpponentClass::Selfplay => {
                let n = scenario.agent_count() as f64;
                match cbs(&scenario.map, &scenario.starts, &scenario.goals, limits) {
                    Ok(plan) => values.push(plan.sum_of_costs as f64 / n),
                    Err(CbsError::Timeout { .. }) => {
                        approximate = true;
                        match bounded_cbs(
                            &scenario.map,
                            &scenario.starts,
                            &scenario.goals,
                            suboptimality,
                            limits,
                        ) {
                            Ok(plan) => values.push(plan.sum_of_costs as f64 / n),
                            Err(CbsError::Timeout { incumbent: Some(plan) }) => {
                                values.push(plan.sum_of_costs as f64 / n)
                            }
                            Err(_) => values.push(mean_distance(scenario)),
                        }
                    }
                    Err(_) => {
                        approximate = true;
                        values.push(mean_distance(scenario));
                    }
                }
            }
        }
    }
    let (lower_mean, lower_std) = mean_std(&values);
    Bounds { lower_mean, lower_std, upper, approximate }
}

fn own_distance(scenario: &Scenario) -> f64 {
    let me = scenario.modelling_index;
    let field = bfs_distance(&scenario.map, scenario.goals[me]).expect("goal is passable");
    field.get(scenario.starts[me]) as f64
}

fn mean_distance(scenario: &Scenario) -> f64 {
    let n = scenario.agent_count();
    let total: f64 = (0..n)
        .map(|k| {
            let field = bfs_distance(&scenario.map, scenario.goals[k]).expect("goal is passable");
            field.get(scenario.starts[k]) as f64
        })
        .sum();
    total / n as f64
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

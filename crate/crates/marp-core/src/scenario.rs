//! Scenario assembly: seeded map/agent generation, opponent pools, and
//! the scenario file format.
//!
//! A scenario file is a line-oriented key-value document:
//!
//! ```text
//! map maps/small2a.map
//! modelling 0
//! max_steps 32
//! seed 42
//! epsilon 0.0007
//! agent 0 start (3,4) goal (7,7) spec self
//! agent 1 start (0,0) goal (5,5) spec sp
//! ```
//!
//! The modelling agent's spec is the literal `self`; every other agent
//! carries an opponent spec string.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::{bfs_distance, Cell, GridMap, JointState};
use crate::opponents::{OpponentSpec, SpecError};
use crate::rng::{rng_for, Stream};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Spec(#[from] SpecError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("could not generate a feasible scenario after {0} attempts")]
    Infeasible(usize),
}

/// How many obstacles a generated map gets.
#[derive(Debug, Clone, Copy)]
pub enum ObstacleSpec {
    Density(f64),
    /// Exact number of passable cells to leave, matching a published
    /// state-space size.
    TargetEmpty(usize),
}

/// Where opponent specs come from during generation.
#[derive(Debug, Clone)]
pub enum OpponentPool {
    /// Uniform draw per opponent from self-interested agents.
    Rational,
    /// Everybody hunts the modelling agent.
    Malicious { p: f64 },
    /// Explicit specs, cycled over the opponent slots.
    Fixed(Vec<OpponentSpec>),
}

impl OpponentPool {
    pub const RATIONAL_MIX: [OpponentSpec; 4] = [
        OpponentSpec::ShortestPath,
        OpponentSpec::Random(0.2),
        OpponentSpec::Random(0.5),
        OpponentSpec::Safe,
    ];

    fn draw(&self, slot: usize, rng: &mut ChaCha8Rng) -> OpponentSpec {
        match self {
            OpponentPool::Rational => {
                Self::RATIONAL_MIX[rng.gen_range(0..Self::RATIONAL_MIX.len())]
            }
            OpponentPool::Malicious { p } => OpponentSpec::Chasing(*p),
            OpponentPool::Fixed(specs) => specs[slot % specs.len()],
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenParams {
    pub width: usize,
    pub height: usize,
    pub obstacles: ObstacleSpec,
    pub agents: usize,
    pub pool: OpponentPool,
    pub max_steps: usize,
    pub epsilon: f64,
    pub seed: u64,
}

/// One benchmark instance.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub map: Arc<GridMap>,
    pub starts: Vec<Cell>,
    pub goals: Vec<Cell>,
    pub modelling_index: usize,
    pub opponent_specs: Vec<OpponentSpec>,
    pub max_steps: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn agent_count(&self) -> usize {
        self.starts.len()
    }

    /// Agent indices of the opponents, ascending; parallel to
    /// `opponent_specs`.
    pub fn opponent_indices(&self) -> Vec<usize> {
        (0..self.agent_count()).filter(|&i| i != self.modelling_index).collect()
    }

    pub fn initial_state(&self) -> JointState {
        let mut state = JointState::new(self.starts.clone());
        for i in 0..self.agent_count() {
            state.arrived[i] = self.starts[i] == self.goals[i];
        }
        state
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let n = self.agent_count();
        let fail = |msg: String| Err(ScenarioError::Invalid(msg));
        if n == 0 {
            return fail("no agents".into());
        }
        if self.goals.len() != n {
            return fail("starts/goals length mismatch".into());
        }
        if self.modelling_index >= n {
            return fail(format!("modelling index {} out of range", self.modelling_index));
        }
        if self.opponent_specs.len() != n - 1 {
            return fail(format!(
                "expected {} opponent specs, got {}",
                n - 1,
                self.opponent_specs.len()
            ));
        }
        for (what, cells) in [("start", &self.starts), ("goal", &self.goals)] {
            for (i, &c) in cells.iter().enumerate() {
                if !self.map.is_passable(c) {
                    return fail(format!("agent {i} {what} {c} not passable"));
                }
                if cells[..i].contains(&c) {
                    return fail(format!("duplicate {what} {c}"));
                }
            }
        }
        Ok(())
    }
}

/// Draws a scenario deterministically from `params`. Maps are retried
/// until every agent's goal is reachable from its start.
pub fn generate_scenario(params: &GenParams) -> Result<Scenario, ScenarioError> {
    const ATTEMPTS: usize = 200;
    let GenParams { width, height, agents, .. } = *params;
    let cells = width * height;
    let target_empty = match params.obstacles {
        ObstacleSpec::Density(d) => cells - ((cells as f64 * d).round() as usize).min(cells),
        ObstacleSpec::TargetEmpty(e) => e,
    };
    if target_empty > cells || target_empty < agents {
        return Err(ScenarioError::Invalid(format!(
            "cannot fit {agents} agents on {target_empty} empty cells"
        )));
    }

    let mut rng = rng_for(params.seed, Stream::ScenarioGen, 0);
    for _ in 0..ATTEMPTS {
        let mut order: Vec<usize> = (0..cells).collect();
        order.shuffle(&mut rng);
        let mut passable = vec![false; cells];
        for &i in order.iter().take(target_empty) {
            passable[i] = true;
        }
        let map = match GridMap::from_passable(width, height, passable) {
            Ok(m) => Arc::new(m),
            Err(_) => continue,
        };
        let open = map.passable_cells();

        // Starts and goals are each distinct draws; an agent's own goal
        // must differ from its start and be reachable.
        let mut placement_rng = rng.clone();
        let placed = (0..8).find_map(|_| {
            let starts: Vec<Cell> =
                open.choose_multiple(&mut placement_rng, agents).copied().collect();
            let goals: Vec<Cell> =
                open.choose_multiple(&mut placement_rng, agents).copied().collect();
            if starts.len() < agents || goals.len() < agents {
                return None;
            }
            for i in 0..agents {
                if starts[i] == goals[i] {
                    return None;
                }
                let field = bfs_distance(&map, goals[i]).ok()?;
                if !field.is_reachable(starts[i]) {
                    return None;
                }
            }
            Some((starts, goals))
        });
        let Some((starts, goals)) = placed else { continue };

        let mut spec_rng = rng_for(params.seed, Stream::ScenarioGen, 1);
        let opponent_specs =
            (0..agents - 1).map(|slot| params.pool.draw(slot, &mut spec_rng)).collect();

        let scenario = Scenario {
            name: format!("{width}x{height}-{agents}a-{}", params.seed),
            map,
            starts,
            goals,
            modelling_index: 0,
            opponent_specs,
            max_steps: params.max_steps,
            epsilon: params.epsilon,
            seed: params.seed,
        };
        scenario.validate()?;
        return Ok(scenario);
    }
    Err(ScenarioError::Infeasible(ATTEMPTS))
}

fn parse_cell(token: &str, line: usize) -> Result<Cell, ScenarioError> {
    let bad = || ScenarioError::Parse {
        line,
        msg: format!("expected `(row,col)`, got `{token}`"),
    };
    let inner = token.strip_prefix('(').and_then(|t| t.strip_suffix(')')).ok_or_else(bad)?;
    let (r, c) = inner.split_once(',').ok_or_else(bad)?;
    Ok(Cell::new(
        r.trim().parse().map_err(|_| bad())?,
        c.trim().parse().map_err(|_| bad())?,
    ))
}

/// Parsed scenario file before the map is loaded.
#[derive(Debug, Clone)]
pub struct ScenarioFile {
    pub map_path: String,
    pub modelling_index: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub epsilon: f64,
    /// Per agent: start, goal, spec (`None` marks the modelling agent).
    pub agents: Vec<(Cell, Cell, Option<OpponentSpec>)>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut map_path = None;
        let mut modelling_index = None;
        let mut max_steps = None;
        let mut seed = None;
        let mut epsilon = 7e-4;
        let mut agents: Vec<(usize, Cell, Cell, Option<OpponentSpec>)> = Vec::new();

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let row = raw.trim();
            if row.is_empty() || row.starts_with('#') {
                continue;
            }
            let mut tokens = row.split_whitespace();
            let key = tokens.next().unwrap();
            let mut next = |what: &str| {
                tokens.next().ok_or_else(|| ScenarioError::Parse {
                    line,
                    msg: format!("missing {what}"),
                })
            };
            let parse_num = |tok: &str, what: &str| -> Result<u64, ScenarioError> {
                tok.parse().map_err(|_| ScenarioError::Parse {
                    line,
                    msg: format!("bad {what} `{tok}`"),
                })
            };
            match key {
                "map" => map_path = Some(next("map path")?.to_string()),
                "modelling" => {
                    modelling_index = Some(parse_num(next("index")?, "index")? as usize)
                }
                "max_steps" => max_steps = Some(parse_num(next("count")?, "count")? as usize),
                "seed" => seed = Some(parse_num(next("seed")?, "seed")?),
                "epsilon" => {
                    let tok = next("value")?;
                    epsilon = tok.parse().map_err(|_| ScenarioError::Parse {
                        line,
                        msg: format!("bad epsilon `{tok}`"),
                    })?;
                }
                "agent" => {
                    let index = parse_num(next("agent index")?, "agent index")? as usize;
                    let expect = |tok: &str, want: &str| -> Result<(), ScenarioError> {
                        if tok != want {
                            return Err(ScenarioError::Parse {
                                line,
                                msg: format!("expected `{want}`, got `{tok}`"),
                            });
                        }
                        Ok(())
                    };
                    expect(next("start")?, "start")?;
                    let start = parse_cell(next("start cell")?, line)?;
                    expect(next("goal")?, "goal")?;
                    let goal = parse_cell(next("goal cell")?, line)?;
                    expect(next("spec")?, "spec")?;
                    let spec_tok = next("spec string")?;
                    let spec = if spec_tok == "self" {
                        None
                    } else {
                        Some(OpponentSpec::parse(spec_tok)?)
                    };
                    agents.push((index, start, goal, spec));
                }
                other => {
                    return Err(ScenarioError::Parse {
                        line,
                        msg: format!("unknown key `{other}`"),
                    })
                }
            }
        }

        agents.sort_by_key(|&(i, ..)| i);
        for (slot, &(i, ..)) in agents.iter().enumerate() {
            if i != slot {
                return Err(ScenarioError::Invalid(format!(
                    "agent indices must be 0..n-1, found {i} at slot {slot}"
                )));
            }
        }
        Ok(ScenarioFile {
            map_path: map_path
                .ok_or_else(|| ScenarioError::Invalid("missing `map` line".into()))?,
            modelling_index: modelling_index
                .ok_or_else(|| ScenarioError::Invalid("missing `modelling` line".into()))?,
            max_steps: max_steps
                .ok_or_else(|| ScenarioError::Invalid("missing `max_steps` line".into()))?,
            seed: seed.ok_or_else(|| ScenarioError::Invalid("missing `seed` line".into()))?,
            epsilon,
            agents: agents.into_iter().map(|(_, s, g, spec)| (s, g, spec)).collect(),
        })
    }

    /// Binds a loaded map to the parsed agents and validates.
    pub fn into_scenario(self, name: String, map: Arc<GridMap>) -> Result<Scenario, ScenarioError> {
        let n = self.agents.len();
        let mut starts = Vec::with_capacity(n);
        let mut goals = Vec::with_capacity(n);
        let mut opponent_specs = Vec::with_capacity(n.saturating_sub(1));
        for (i, (start, goal, spec)) in self.agents.into_iter().enumerate() {
            starts.push(start);
            goals.push(goal);
            match spec {
                None if i == self.modelling_index => {}
                Some(s) if i != self.modelling_index => opponent_specs.push(s),
                None => {
                    return Err(ScenarioError::Invalid(format!(
                        "agent {i} marked `self` but modelling index is {}",
                        self.modelling_index
                    )))
                }
                Some(_) => {
                    return Err(ScenarioError::Invalid(format!(
                        "modelling agent {i} must use spec `self`"
                    )))
                }
            }
        }
        let scenario = Scenario {
            name,
            map,
            starts,
            goals,
            modelling_index: self.modelling_index,
            opponent_specs,
            max_steps: self.max_steps,
            epsilon: self.epsilon,
            seed: self.seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Renders a scenario to the file format, referencing `map_path`.
pub fn scenario_to_text(scenario: &Scenario, map_path: &str) -> String {
    let mut out = String::new();
    writeln!(out, "map {map_path}").unwrap();
    writeln!(out, "modelling {}", scenario.modelling_index).unwrap();
    writeln!(out, "max_steps {}", scenario.max_steps).unwrap();
    writeln!(out, "seed {}", scenario.seed).unwrap();
    writeln!(out, "epsilon {}", scenario.epsilon).unwrap();
    let mut spec_iter = scenario.opponent_specs.iter();
    for i in 0..scenario.agent_count() {
        let spec = if i == scenario.modelling_index {
            "self".to_string()
        } else {
            spec_iter.next().expect("validated spec count").to_string()
        };
        writeln!(
            out,
            "agent {i} start {} goal {} spec {spec}",
            scenario.starts[i], scenario.goals[i]
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> GenParams {
        GenParams {
            width: 8,
            height: 8,
            obstacles: ObstacleSpec::TargetEmpty(31),
            agents: 2,
            pool: OpponentPool::Rational,
            max_steps: 32,
            epsilon: 7e-4,
            seed: 42,
        }
    }

    #[test]
    fn generation_is_deterministic_and_feasible() {
        let a = generate_scenario(&params()).unwrap();
        let b = generate_scenario(&params()).unwrap();
        assert_eq!(a.starts, b.starts);
        assert_eq!(a.goals, b.goals);
        assert_eq!(a.opponent_specs, b.opponent_specs);
        assert_eq!(a.map.empty_cells(), 31);
        for i in 0..2 {
            let field = bfs_distance(&a.map, a.goals[i]).unwrap();
            assert!(field.is_reachable(a.starts[i]));
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_scenario(&params()).unwrap();
        let mut p = params();
        p.seed = 43;
        let b = generate_scenario(&p).unwrap();
        assert!(a.starts != b.starts || a.goals != b.goals || a.map != b.map);
    }

    #[test]
    fn four_agent_generation_reaches_goals() {
        let p = GenParams {
            width: 12,
            height: 12,
            obstacles: ObstacleSpec::TargetEmpty(86),
            agents: 4,
            pool: OpponentPool::Rational,
            max_steps: 48,
            epsilon: 2e-4,
            seed: 7,
        };
        let s = generate_scenario(&p).unwrap();
        assert_eq!(s.agent_count(), 4);
        s.validate().unwrap();
        for i in 0..4 {
            let field = bfs_distance(&s.map, s.goals[i]).unwrap();
            assert!(field.is_reachable(s.starts[i]));
        }
    }

    #[test]
    fn malicious_pool_assigns_chasers() {
        let p = GenParams { pool: OpponentPool::Malicious { p: 0.5 }, ..params() };
        let s = generate_scenario(&p).unwrap();
        assert_eq!(s.opponent_specs, vec![OpponentSpec::Chasing(0.5)]);
    }

    #[test]
    fn scenario_file_roundtrip() {
        let scenario = generate_scenario(&params()).unwrap();
        let text = scenario_to_text(&scenario, "small.map");
        let parsed = ScenarioFile::parse(&text).unwrap();
        assert_eq!(parsed.map_path, "small.map");
        let rebuilt = parsed
            .into_scenario(scenario.name.clone(), scenario.map.clone())
            .unwrap();
        assert_eq!(rebuilt.starts, scenario.starts);
        assert_eq!(rebuilt.goals, scenario.goals);
        assert_eq!(rebuilt.opponent_specs, scenario.opponent_specs);
        assert_eq!(rebuilt.epsilon, scenario.epsilon);
    }

    #[test]
    fn scenario_file_errors_name_lines() {
        let err = ScenarioFile::parse("map m.map\nmodelling 0\nbogus 1\n").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { line: 3, .. }));
    }
}

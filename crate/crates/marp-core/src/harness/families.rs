//! The published benchmark families. Each family pins a map size, an
//! exact number of passable cells, an agent count, the modelling noise
//! and the per-planner tuning knobs, so "small2a at seed 17" means the
//! same instance everywhere.

use crate::ne_oracle::CbsLimits;
use crate::planners::Tunables;
use crate::scenario::{
    generate_scenario, GenParams, ObstacleSpec, OpponentPool, Scenario, ScenarioError,
};

/// Which backup the uniform tree search runs in this family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Backup {
    Exact,
    Sampled(usize),
}

/// One named benchmark family.
#[derive(Debug, Clone)]
pub struct Family {
    pub name: &'static str,
    pub width: usize,
    pub height: usize,
    /// Passable cells the generated maps are trimmed to.
    pub target_empty: usize,
    pub agents: usize,
    /// Step cap per episode; also the penalized length of an episode
    /// that collides or times out.
    pub upper_bound: usize,
    /// Noise floor of the opponent hypothesis policies.
    pub epsilon: f64,
    /// Episode count a full benchmark of this family runs.
    pub default_runs: usize,
    depth: usize,
    eval_samples: usize,
    backup: Backup,
    max_iter: usize,
    select_samples: usize,
}

impl Family {
    pub fn gen_params(&self, pool: OpponentPool, seed: u64) -> GenParams {
        GenParams {
            width: self.width,
            height: self.height,
            obstacles: ObstacleSpec::TargetEmpty(self.target_empty),
            agents: self.agents,
            pool,
            max_steps: self.upper_bound,
            epsilon: self.epsilon,
            seed,
        }
    }

    pub fn scenario(&self, pool: OpponentPool, seed: u64) -> Result<Scenario, ScenarioError> {
        generate_scenario(&self.gen_params(pool, seed))
    }

    /// The family's tuning knobs on top of the library defaults.
    pub fn tunables(&self) -> Tunables {
        let mut t = Tunables::default();
        t.depth = self.depth;
        t.eval_samples = self.eval_samples;
        if let Backup::Sampled(k) = self.backup {
            t.backup_samples = k;
        }
        t.max_iter = self.max_iter;
        t.select_samples = self.select_samples;
        t.cbs_limits = CbsLimits::evaluation();
        t
    }

    /// Whether the uniform tree search defaults to sampled backups here.
    pub fn sampled_backup(&self) -> bool {
        matches!(self.backup, Backup::Sampled(_))
    }
}

/// All families, smallest first.
pub const FAMILIES: [Family; 6] = [
    // A 3x3 open-room testbed, small enough for exhaustive oracles.
    Family {
        name: "tiny2a",
        width: 3,
        height: 3,
        target_empty: 9,
        agents: 2,
        upper_bound: 16,
        epsilon: 7e-4,
        default_runs: 500,
        depth: 2,
        eval_samples: 10,
        backup: Backup::Exact,
        max_iter: 30,
        select_samples: 50,
    },
    Family {
        name: "small2a",
        width: 8,
        height: 8,
        target_empty: 31,
        agents: 2,
        upper_bound: 32,
        epsilon: 7e-4,
        default_runs: 500,
        depth: 2,
        eval_samples: 10,
        backup: Backup::Exact,
        max_iter: 30,
        select_samples: 50,
    },
    Family {
        name: "square2a",
        width: 12,
        height: 12,
        target_empty: 86,
        agents: 2,
        upper_bound: 48,
        epsilon: 2e-4,
        default_runs: 1000,
        depth: 2,
        eval_samples: 10,
        backup: Backup::Exact,
        max_iter: 50,
        select_samples: 50,
    },
    Family {
        name: "square4a",
        width: 12,
        height: 12,
        target_empty: 86,
        agents: 4,
        upper_bound: 48,
        epsilon: 2e-4,
        default_runs: 1500,
        depth: 1,
        eval_samples: 5,
        backup: Backup::Sampled(10),
        max_iter: 60,
        select_samples: 50,
    },
    // The two crowd sizes are only run with the rule agents and MCTS;
    // the exact-backup knobs keep conservative defaults anyway.
    Family {
        name: "medium20a",
        width: 18,
        height: 18,
        target_empty: 219,
        agents: 20,
        upper_bound: 144,
        epsilon: 8e-5,
        default_runs: 1000,
        depth: 1,
        eval_samples: 5,
        backup: Backup::Sampled(10),
        max_iter: 80,
        select_samples: 80,
    },
    Family {
        name: "large50a",
        width: 32,
        height: 32,
        target_empty: 819,
        agents: 50,
        upper_bound: 256,
        epsilon: 2e-5,
        default_runs: 500,
        depth: 1,
        eval_samples: 2,
        backup: Backup::Sampled(10),
        max_iter: 100,
        select_samples: 125,
    },
];

/// Looks a family up by name.
pub fn family(name: &str) -> Option<&'static Family> {
    FAMILIES.iter().find(|f| f.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::state_count;

    #[test]
    fn lookup_finds_every_family_by_name() {
        for f in &FAMILIES {
            assert_eq!(family(f.name).unwrap().name, f.name);
        }
        assert!(family("gigantic99a").is_none());
    }

    #[test]
    fn passable_cell_targets_reproduce_published_state_counts() {
        let small = family("small2a").unwrap();
        assert_eq!(state_count(small.target_empty, small.agents), 930u32.into());
        let square = family("square2a").unwrap();
        assert_eq!(state_count(square.target_empty, square.agents), 7310u32.into());
    }

    #[test]
    fn every_family_generates_a_valid_scenario() {
        for f in &FAMILIES {
            let scenario = f
                .scenario(OpponentPool::Rational, 1)
                .unwrap_or_else(|e| panic!("{}: {e}", f.name));
            scenario.validate().unwrap();
            assert_eq!(scenario.agent_count(), f.agents, "{}", f.name);
            assert_eq!(scenario.map.empty_cells(), f.target_empty, "{}", f.name);
            assert_eq!(scenario.max_steps, f.upper_bound, "{}", f.name);
        }
    }

    #[test]
    fn rational_pool_draws_are_uniform_over_many_scenarios() {
        use crate::opponents::OpponentSpec;

        let fam = family("tiny2a").unwrap();
        let mut counts = [0usize; 4];
        for seed in 0..1000 {
            let scenario = fam.scenario(OpponentPool::Rational, seed).unwrap();
            let slot = OpponentPool::RATIONAL_MIX
                .iter()
                .position(|&s| s == scenario.opponent_specs[0])
                .expect("spec comes from the mix");
            counts[slot] += 1;
        }
        let sigma = (1000.0f64 * 0.25 * 0.75).sqrt();
        for (slot, &count) in counts.iter().enumerate() {
            let dev = (count as f64 - 250.0).abs();
            let spec: OpponentSpec = OpponentPool::RATIONAL_MIX[slot];
            assert!(dev <= 3.0 * sigma, "{spec:?} drawn {count} times");
        }
    }

    #[test]
    fn family_knobs_override_the_defaults() {
        let t = family("square4a").unwrap().tunables();
        assert_eq!(t.depth, 1);
        assert_eq!(t.eval_samples, 5);
        assert_eq!(t.backup_samples, 10);
        assert_eq!(t.max_iter, 60);
        assert_eq!(t.select_samples, 50);
        assert!(family("square4a").unwrap().sampled_backup());
        assert!(!family("small2a").unwrap().sampled_backup());

        let t = family("large50a").unwrap().tunables();
        assert_eq!(t.eval_samples, 2);
        assert_eq!(t.max_iter, 100);
        assert_eq!(t.select_samples, 125);
    }
}

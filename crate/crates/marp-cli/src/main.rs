//! Command line front end: scenario generation, single episodes with
//! ASCII rendering, benchmark suites, replay verification, and the
//! standalone joint-plan solver.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use marp_core::env::{step, Cell, GridMap, JointState, MoveAction};
use marp_core::harness::{
    compute_bounds, csv_fields, csv_quote, family, penalized_length, run_episode, run_selfplay,
    run_suite, selfplay_penalized, EpisodeRecord, OpponentClass, SelfplayRecord, SuiteConfig,
    CSV_HEADER,
};
use marp_core::ne_oracle::{bounded_cbs, CbsLimits};
use marp_core::planners::{PlannerSpec, Tunables};
use marp_core::scenario::{scenario_to_text, Scenario, ScenarioFile};

type CliError = Box<dyn std::error::Error>;

#[derive(Parser)]
#[command(name = "marp", version, about = "Multi-agent route planning benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded scenario and map files from a named family.
    Gen(GenArgs),
    /// Run one episode; render it, save it, or both.
    Run(RunArgs),
    /// Run a benchmark suite and emit the CSV report.
    Bench(BenchArgs),
    /// Re-execute a saved episode and verify it reproduces exactly.
    Replay(ReplayArgs),
    /// Solve one instance with the conflict-based joint planner.
    Solve(SolveArgs),
    /// Re-emit a bench CSV as long-format plotting data.
    PlotData(PlotArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Scenario family, e.g. small2a.
    #[arg(long)]
    family: String,
    /// Opponent pool: rational, malicious or selfplay.
    #[arg(long, default_value = "rational")]
    class: String,
    /// Seed of the first scenario; later ones count up from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario family to draw from, combined with --seed.
    #[arg(long, conflicts_with = "scenario")]
    family: Option<String>,
    /// Scenario file to load instead of generating one.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value = "rational")]
    class: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Planner spec string, e.g. qmdp or mcts:sel=puct,eval=cbs.
    #[arg(long)]
    planner: String,
    /// Print one ASCII frame per step: agents as digits, goals as
    /// letters, obstacles as @.
    #[arg(long)]
    render: bool,
    /// Save the episode as a JSON dump for `replay`.
    #[arg(long)]
    save: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Suite config file; replaces every inline flag below.
    #[arg(long, conflicts_with_all = ["family", "planners", "runs"])]
    config: Option<PathBuf>,
    #[arg(long)]
    family: Option<String>,
    #[arg(long, default_value = "rational")]
    class: String,
    /// Planner spec; repeat the flag for a lineup.
    #[arg(long = "planner")]
    planners: Vec<String>,
    /// Episodes per planner; defaults to the family's published count.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    /// CSV output path, or `-` for stdout.
    #[arg(long, default_value = "-")]
    out: String,
    /// Also compute reference path-length bounds for the batch.
    #[arg(long)]
    bounds: bool,
}

#[derive(Args)]
struct ReplayArgs {
    /// Episode dump written by `run --save`.
    #[arg(long)]
    record: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    /// Map file.
    #[arg(long)]
    map: PathBuf,
    /// Scenario file providing the starts and goals.
    #[arg(long)]
    agents: PathBuf,
    /// Suboptimality slack; 0 solves to optimality.
    #[arg(long, default_value_t = 0.0)]
    w: f64,
    /// Wall-clock budget in milliseconds.
    #[arg(long)]
    wall_ms: Option<u64>,
}

#[derive(Args)]
struct PlotArgs {
    /// Bench CSV to transform.
    #[arg(long)]
    csv: PathBuf,
}

/// A self-contained episode dump: everything `replay` needs to rebuild
/// the scenario and re-run the planner.
#[derive(Serialize, Deserialize)]
struct EpisodeDump {
    planner: String,
    /// Family whose tuning knobs ran the episode, when one was used.
    family: Option<String>,
    map_text: String,
    scenario_text: String,
    record: DumpRecord,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum DumpRecord {
    Benchmark(EpisodeRecord),
    Selfplay(SelfplayRecord),
}

fn main() -> ExitCode {
    // Die quietly when a downstream pipe closes, as cat and grep do,
    // instead of panicking mid write.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Run(args) => cmd_run(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Solve(args) => cmd_solve(args),
        Command::PlotData(args) => cmd_plot_data(args),
    }
}

fn parse_class(text: &str) -> Result<OpponentClass, CliError> {
    OpponentClass::parse(text)
        .ok_or_else(|| format!("unknown opponent class `{text}`, want rational|malicious|selfplay").into())
}

fn parse_planner(text: &str) -> Result<PlannerSpec, CliError> {
    Ok(PlannerSpec::parse(text)?)
}

fn lookup_family(name: &str) -> Result<&'static marp_core::harness::Family, CliError> {
    family(name).ok_or_else(|| format!("unknown scenario family `{name}`").into())
}

fn cmd_gen(args: GenArgs) -> Result<ExitCode, CliError> {
    let fam = lookup_family(&args.family)?;
    let class = parse_class(&args.class)?;
    fs::create_dir_all(&args.out_dir)?;
    for i in 0..args.count {
        let scenario = fam.scenario(class.pool(), args.seed + i)?;
        let map_name = format!("{}.map", scenario.name);
        fs::write(args.out_dir.join(&map_name), scenario.map.to_text())?;
        let scen_path = args.out_dir.join(format!("{}.scen", scenario.name));
        fs::write(&scen_path, scenario_to_text(&scenario, &map_name))?;
        println!("{}", scen_path.display());
    }
    Ok(ExitCode::SUCCESS)
}

/// Scenario plus the knobs it should run with.
fn load_scenario(args: &RunArgs, class: OpponentClass) -> Result<(Scenario, Tunables), CliError> {
    if let Some(name) = &args.family {
        let fam = lookup_family(name)?;
        let scenario = fam.scenario(class.pool(), args.seed)?;
        return Ok((scenario, fam.tunables()));
    }
    let path = args
        .scenario
        .as_ref()
        .ok_or("one of --family or --scenario is required")?;
    Ok((read_scenario_file(path)?, Tunables::default()))
}

fn read_scenario_file(path: &Path) -> Result<Scenario, CliError> {
    let file = ScenarioFile::parse(&fs::read_to_string(path)?)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let map_text = fs::read_to_string(dir.join(&file.map_path))?;
    let map = Arc::new(GridMap::parse(&map_text)?);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    Ok(file.into_scenario(name, map)?)
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, CliError> {
    let class = parse_class(&args.class)?;
    let (scenario, tunables) = load_scenario(&args, class)?;
    let spec = parse_planner(&args.planner)?;
    let seed = scenario.seed;

    let record = if class == OpponentClass::Selfplay {
        let record = run_selfplay(&scenario, &spec, &tunables, seed)?;
        let penalized = selfplay_penalized(&record, scenario.max_steps);
        println!(
            "{}: {} steps, per-agent finish {:?}, collided {}, timed out {}, \
             mean penalized {:.2}, fallbacks {}",
            scenario.name,
            record.steps,
            record.finish,
            record.collided.iter().filter(|&&c| c).count(),
            record.timed_out.iter().filter(|&&t| t).count(),
            penalized.iter().sum::<f64>() / penalized.len() as f64,
            record.fallbacks,
        );
        if args.render {
            render_episode(&scenario, &record.trajectory);
        }
        DumpRecord::Selfplay(record)
    } else {
        let record = run_episode(&scenario, &spec, &tunables, seed)?;
        let outcome = if record.collided {
            "collided"
        } else if record.timed_out {
            "timed out"
        } else {
            "reached goal"
        };
        println!(
            "{}: {} in {} steps, penalized {:.0}, fallbacks {}",
            scenario.name,
            outcome,
            record.modelling_path_length,
            penalized_length(&record, scenario.max_steps),
            record.fallbacks,
        );
        if args.render {
            render_episode(&scenario, &record.trajectory);
        }
        DumpRecord::Benchmark(record)
    };

    if let Some(path) = &args.save {
        let dump = EpisodeDump {
            planner: spec.to_string(),
            family: args.family.clone(),
            map_text: scenario.map.to_text(),
            scenario_text: scenario_to_text(&scenario, "inline.map"),
            record,
        };
        fs::write(path, serde_json::to_string_pretty(&dump)?)?;
        println!("saved {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode, CliError> {
    let config = if let Some(path) = &args.config {
        SuiteConfig::parse(&fs::read_to_string(path)?)?
    } else {
        let name = args.family.as_deref().ok_or("either --config or --family is required")?;
        let fam = lookup_family(name)?;
        if args.planners.is_empty() {
            return Err("at least one --planner is required".into());
        }
        SuiteConfig {
            family: name.to_string(),
            class: parse_class(&args.class)?,
            planners: args
                .planners
                .iter()
                .map(|p| parse_planner(p))
                .collect::<Result<_, _>>()?,
            runs: args.runs.unwrap_or(fam.default_runs),
            base_seed: args.seed,
            workers: args.workers,
        }
    };

    let report = run_suite(&config);
    for row in &report.rows {
        if row.failures > 0 {
            eprintln!("{}: {} of {} episodes failed", row.planner, row.failures, config.runs);
        }
    }
    let csv = report.to_csv();
    if args.out == "-" {
        print!("{csv}");
    } else {
        fs::write(&args.out, &csv)?;
        println!("wrote {}", args.out);
    }

    if args.bounds {
        let fam = config.family();
        let tunables = fam.tunables();
        let scenarios: Vec<Scenario> = (0..config.runs)
            .filter_map(|i| fam.scenario(config.class.pool(), config.base_seed + i as u64).ok())
            .collect();
        let bounds = compute_bounds(
            &scenarios,
            config.class,
            fam.upper_bound,
            tunables.suboptimality,
            &tunables.cbs_limits,
        );
        println!(
            "bounds: lower {:.3} (std {:.3}), upper {}{}",
            bounds.lower_mean,
            bounds.lower_std,
            bounds.upper,
            if bounds.approximate { " (lower bound approximate)" } else { "" },
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_replay(args: ReplayArgs) -> Result<ExitCode, CliError> {
    let dump: EpisodeDump = serde_json::from_str(&fs::read_to_string(&args.record)?)?;
    let map = Arc::new(GridMap::parse(&dump.map_text)?);
    let file = ScenarioFile::parse(&dump.scenario_text)?;
    let name = match &dump.record {
        DumpRecord::Benchmark(r) => r.scenario.clone(),
        DumpRecord::Selfplay(r) => r.scenario.clone(),
    };
    let scenario = file.into_scenario(name, map)?;
    let spec = parse_planner(&dump.planner)?;
    let tunables = match &dump.family {
        Some(name) => lookup_family(name)?.tunables(),
        None => Tunables::default(),
    };

    let (old, new) = match &dump.record {
        DumpRecord::Benchmark(original) => {
            let fresh = run_episode(&scenario, &spec, &tunables, original.seed)?;
            (original.fingerprint(), fresh.fingerprint())
        }
        DumpRecord::Selfplay(original) => {
            let fresh = run_selfplay(&scenario, &spec, &tunables, original.seed)?;
            (original.fingerprint(), fresh.fingerprint())
        }
    };
    if old == new {
        println!("replay of {} matches", scenario.name);
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("replay of {} DIVERGED from the saved record", scenario.name);
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_solve(args: SolveArgs) -> Result<ExitCode, CliError> {
    let map = GridMap::parse(&fs::read_to_string(&args.map)?)?;
    let file = ScenarioFile::parse(&fs::read_to_string(&args.agents)?)?;
    let starts: Vec<Cell> = file.agents.iter().map(|&(s, _, _)| s).collect();
    let goals: Vec<Cell> = file.agents.iter().map(|&(_, g, _)| g).collect();
    let mut limits = CbsLimits::default();
    if let Some(ms) = args.wall_ms {
        limits.wall_clock = Some(Duration::from_millis(ms));
    }
    let plan = bounded_cbs(&map, &starts, &goals, args.w, &limits)?;
    print!("{}", plan.to_text());
    println!("sum_of_costs {}", plan.sum_of_costs);
    Ok(ExitCode::SUCCESS)
}

fn cmd_plot_data(args: PlotArgs) -> Result<ExitCode, CliError> {
    const METRICS: [(&str, usize); 7] = [
        ("mean_penalized", 4),
        ("std_penalized", 5),
        ("mean_raw", 6),
        ("std_raw", 7),
        ("collision_ratio", 8),
        ("mean_ms_per_step", 9),
        ("fallback_rate", 10),
    ];
    let text = fs::read_to_string(&args.csv)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty csv")?;
    if header != CSV_HEADER {
        return Err(format!("unrecognized csv header `{header}`").into());
    }
    println!("planner,class,metric,value");
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let fields = csv_fields(line);
        if fields.len() != 11 {
            return Err(format!("bad csv row `{line}`").into());
        }
        for (metric, idx) in METRICS {
            println!("{},{},{},{}", csv_quote(&fields[2]), fields[1], metric, fields[idx]);
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Prints the initial state and one frame per step; the last frame is
/// the state after the final recorded action.
fn render_episode(scenario: &Scenario, trajectory: &[(JointState, Vec<MoveAction>)]) {
    if trajectory.is_empty() {
        println!("step 0");
        print!("{}", frame(scenario, &scenario.initial_state()));
        return;
    }
    for (t, (state, _)) in trajectory.iter().enumerate() {
        println!("step {t}");
        print!("{}", frame(scenario, state));
    }
    let (last_state, last_actions) = trajectory.last().expect("nonempty");
    let (end, _) = step(&scenario.map, &scenario.goals, last_state, last_actions);
    println!("step {}", trajectory.len());
    print!("{}", frame(scenario, &end));
}

/// One ASCII frame: agents as digits (index mod 10), goals as letters
/// (index mod 26), obstacles as `@`.
fn frame(scenario: &Scenario, state: &JointState) -> String {
    let map = &scenario.map;
    let mut out = String::with_capacity((map.width() + 1) * map.height());
    for r in 0..map.height() {
        for c in 0..map.width() {
            let cell = Cell::new(r, c);
            let ch = if !map.is_passable(cell) {
                '@'
            } else if let Some(i) = state.positions.iter().position(|&p| p == cell) {
                char::from_digit((i % 10) as u32, 10).expect("single digit")
            } else if let Some(i) = scenario.goals.iter().position(|&g| g == cell) {
                char::from(b'A' + (i % 26) as u8)
            } else {
                '.'
            };
            out.push(ch);
        }
        out.push('\n');
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use marp_core::opponents::OpponentSpec;

    #[test]
    fn frames_show_agents_goals_and_walls() {
        let map = GridMap::parse("height 3 2\n.@.\n...\n").unwrap();
        let scenario = Scenario {
            name: "t".into(),
            map: Arc::new(map),
            starts: vec![Cell::new(0, 0), Cell::new(1, 1)],
            goals: vec![Cell::new(1, 2), Cell::new(0, 2)],
            modelling_index: 0,
            opponent_specs: vec![OpponentSpec::Safe],
            max_steps: 5,
            epsilon: 1e-3,
            seed: 0,
        };
        let text = frame(&scenario, &scenario.initial_state());
        assert_eq!(text, "0@B\n.1A\n\n");
    }

    #[test]
    fn agents_cover_their_own_goal_letter() {
        let scenario = Scenario {
            name: "t".into(),
            map: Arc::new(GridMap::open(2, 1)),
            starts: vec![Cell::new(0, 0), Cell::new(0, 1)],
            goals: vec![Cell::new(0, 0), Cell::new(0, 1)],
            modelling_index: 0,
            opponent_specs: vec![OpponentSpec::Safe],
            max_steps: 5,
            epsilon: 1e-3,
            seed: 0,
        };
        assert_eq!(frame(&scenario, &scenario.initial_state()), "01\n\n");
    }
}

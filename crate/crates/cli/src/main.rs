//! `patrol` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use patrol::harness::{
    compare_markdown, evaluate, write_run, CompareRow, Config, HarnessError, Recording, StrategyKind, WriteOptions,
};
use patrol::map::{generate_map, parse_map, GenerateParams, GridMap};
use patrol::mappo::Trainer;
use patrol::nn::{load_checkpoint, PolicyModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "patrol", version, about = "Multi-agent patrolling: simulate baselines, train and evaluate MAPPO policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one strategy on one map for a number of episodes.
    Simulate(RunArgs),
    /// Train a MAPPO policy.
    Train(TrainArgs),
    /// Evaluate a trained checkpoint.
    Evaluate(EvalArgs),
    /// Evaluate several strategies and agent counts side by side.
    Compare(CompareArgs),
    /// Map utilities.
    #[command(subcommand)]
    Map(MapCommand),
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// JSON config with sections env, rewards, strategy, train, eval.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Map file; overrides env.map.
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of agents; overrides env.agents.
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Episode length in steps; overrides eval.horizon.
    #[arg(long)]
    horizon: Option<usize>,
    /// Steps left out of the idleness averages.
    #[arg(long)]
    burnin: Option<usize>,
    /// Count only episodes without battery failures.
    #[arg(long)]
    require_success: bool,
    /// Output directory; without it the metrics go to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<StrategyKind>,
    /// Checkpoint for `--strategy rl`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Write events.jsonl (needs --out).
    #[arg(long)]
    events: bool,
    /// Write steps.csv with per-step mean and max idleness (needs --out).
    #[arg(long)]
    csv: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Pick the most likely message and move instead of sampling.
    #[arg(long)]
    greedy: bool,
    #[arg(long)]
    events: bool,
    #[arg(long)]
    csv: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training episodes; overrides train.episodes.
    #[arg(long)]
    episodes: Option<u64>,
    /// Run directory for config.json, metrics.jsonl and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Print one progress line per episode to stderr.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated strategies.
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy, default_value = "cr,part,sebs")]
    strategies: Vec<StrategyKind>,
    /// Comma-separated agent counts; defaults to env.agents.
    #[arg(long = "agent-counts", value_delimiter = ',')]
    agent_counts: Vec<usize>,
    /// Checkpoint for the rl rows.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum MapCommand {
    /// Parse a map file and report its structure.
    Validate { path: PathBuf },
    /// Draw a random valid map.
    Generate {
        #[arg(long, default_value_t = 8)]
        height: usize,
        #[arg(long, default_value_t = 8)]
        width: usize,
        #[arg(long, default_value_t = 0.15)]
        obstacles: f64,
        #[arg(long, default_value_t = 0.1)]
        priorities: f64,
        #[arg(long, default_value_t = 3)]
        max_priority: i32,
        #[arg(long, default_value_t = 1)]
        stations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_strategy(s: &str) -> Result<StrategyKind, String> {
    s.parse::<StrategyKind>().map_err(|e| e.to_string())
}

/// A failure with a stable kind name and the exit code it maps to.
#[derive(Debug)]
struct Failure {
    kind: String,
    message: String,
    code: u8,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: "UsageError".into(),
            message: message.into(),
            code: 2,
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Self {
            kind: e.kind().into(),
            message: e.to_string(),
            code: 1,
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        kind: "IoError".into(),
        message: format!("{}: {e}", path.display()),
        code: 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({ "error": f.kind, "message": f.message }));
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Evaluate(args) => evaluate_checkpoint(args),
        Command::Train(args) => train(args),
        Command::Compare(args) => compare(args),
        Command::Map(cmd) => map_command(cmd),
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    Ok(match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    })
}

/// Applies the shared command-line overrides.
fn resolve(common: &CommonArgs) -> Result<(Config, Arc<GridMap>), Failure> {
    let mut cfg = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.eval.seed = seed;
    }
    if let Some(n) = common.agents {
        cfg.env.agents = n;
    }
    if let Some(n) = common.episodes {
        cfg.eval.episodes = n;
    }
    if let Some(h) = common.horizon {
        cfg.eval.horizon = h;
    }
    if let Some(b) = common.burnin {
        cfg.eval.burnin = b;
    }
    if common.require_success {
        cfg.eval.require_success = true;
    }
    if let Some(m) = &common.map {
        cfg.env.map = Some(m.clone());
    }
    cfg.validate()?;
    let map = cfg.load_map(None)?;
    Ok((cfg, map))
}

fn load_model(path: &Path) -> Result<PolicyModel, Failure> {
    let (model, _) = load_checkpoint(path).map_err(HarnessError::from)?;
    Ok(model)
}

fn check_outputs(out: Option<&Path>, events: bool, csv: bool) -> Result<(), Failure> {
    if out.is_none() && (events || csv) {
        return Err(Failure::usage("--events and --csv need --out"));
    }
    Ok(())
}

/// Runs the evaluation battery and writes or prints its results.
fn run_battery(cfg: &Config, map: Arc<GridMap>, model: Option<&PolicyModel>, out: Option<&Path>, events: bool, csv: bool) -> Result<(), Failure> {
    let record = Recording { events, trace: csv };
    let outcome = evaluate(cfg, map, model, record)?;
    match out {
        Some(dir) => {
            write_run(dir, &outcome, WriteOptions { events, csv })?;
            let resolved = serde_json::to_string_pretty(cfg).expect("config serializes");
            fs::write(dir.join("config.json"), resolved + "\n").map_err(|e| io_failure(dir, e))?;
        }
        None => println!("{}", serde_json::to_string_pretty(&outcome.report).expect("report serializes")),
    }
    Ok(())
}

fn simulate(args: RunArgs) -> Result<(), Failure> {
    check_outputs(args.common.out.as_deref(), args.events, args.csv)?;
    let (mut cfg, map) = resolve(&args.common)?;
    if let Some(kind) = args.strategy {
        cfg.strategy.kind = kind;
    }
    if let Some(ck) = args.checkpoint {
        cfg.strategy.checkpoint = Some(ck);
    }
    let model = match cfg.strategy.kind {
        StrategyKind::Rl => {
            let path = cfg
                .strategy
                .checkpoint
                .clone()
                .ok_or_else(|| Failure::usage("--strategy rl needs --checkpoint or strategy.checkpoint"))?;
            Some(load_model(&path)?)
        }
        _ => None,
    };
    run_battery(&cfg, map, model.as_ref(), args.common.out.as_deref(), args.events, args.csv)
}

fn evaluate_checkpoint(args: EvalArgs) -> Result<(), Failure> {
    check_outputs(args.common.out.as_deref(), args.events, args.csv)?;
    let (mut cfg, map) = resolve(&args.common)?;
    cfg.strategy.kind = StrategyKind::Rl;
    cfg.strategy.checkpoint = Some(args.checkpoint.clone());
    cfg.strategy.greedy |= args.greedy;
    let model = load_model(&args.checkpoint)?;
    run_battery(&cfg, map, Some(&model), args.common.out.as_deref(), args.events, args.csv)
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(m) = args.map {
        cfg.env.map = Some(m);
    }
    if let Some(n) = args.episodes {
        cfg.train.episodes = n;
    }
    cfg.validate()?;
    let map = cfg.load_map(None)?;
    let mut trainer = Trainer::new(cfg.train.clone(), map, cfg.env.params, cfg.rewards, cfg.env.encoding, args.seed)
        .map_err(HarnessError::from)?;
    let verbose = args.verbose;
    let metrics = trainer
        .train(Some(&args.out), |m| {
            if verbose {
                eprintln!("episode {} agents {:?} mean reward {:.3}", m.episode, m.agents, m.mean_reward);
            }
        })
        .map_err(HarnessError::from)?;
    let last = metrics.last();
    println!(
        "{}",
        json!({
            "episodes": metrics.len(),
            "final_mean_reward": last.map(|m| m.mean_reward),
            "checkpoint": args.out.join("checkpoints").join("final.ptck"),
        })
    );
    Ok(())
}

fn compare(args: CompareArgs) -> Result<(), Failure> {
    let (base, map) = resolve(&args.common)?;
    let counts = if args.agent_counts.is_empty() { vec![base.env.agents] } else { args.agent_counts.clone() };
    let model = match (args.strategies.contains(&StrategyKind::Rl), &args.checkpoint) {
        (false, _) => None,
        (true, Some(p)) => Some(load_model(p)?),
        (true, None) => return Err(Failure::usage("rl rows need --checkpoint")),
    };
    let mut rows = Vec::new();
    for &agents in &counts {
        for &kind in &args.strategies {
            let mut cfg = base.clone();
            cfg.env.agents = agents;
            cfg.strategy.kind = kind;
            cfg.validate()?;
            let model = if kind == StrategyKind::Rl { model.as_ref() } else { None };
            let outcome = evaluate(&cfg, map.clone(), model, Recording::default())?;
            rows.push(CompareRow {
                strategy: kind.name().to_string(),
                agents,
                aggregate: outcome.report.aggregate,
            });
        }
    }
    let table = compare_markdown(&rows);
    match args.common.out.as_deref() {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
            let json = serde_json::to_string_pretty(&rows).expect("rows serialize");
            fs::write(dir.join("compare.json"), json + "\n").map_err(|e| io_failure(dir, e))?;
            fs::write(dir.join("compare.md"), &table).map_err(|e| io_failure(dir, e))?;
        }
        None => print!("{table}"),
    }
    Ok(())
}

fn map_command(cmd: MapCommand) -> Result<(), Failure> {
    match cmd {
        MapCommand::Validate { path } => {
            let text = fs::read_to_string(&path).map_err(|e| io_failure(&path, e))?;
            let map = parse_map(&text).map_err(HarnessError::from)?;
            println!(
                "{}",
                json!({
                    "valid": true,
                    "height": map.height(),
                    "width": map.width(),
                    "vertices": map.vertices().len(),
                    "stations": map.stations().len(),
                    "vertex_graph_connected": map.vertex_graph_connected(),
                })
            );
            Ok(())
        }
        MapCommand::Generate {
            height,
            width,
            obstacles,
            priorities,
            max_priority,
            stations,
            seed,
            out,
        } => {
            if !(0.0..=1.0).contains(&obstacles) || !(0.0..=1.0).contains(&priorities) {
                return Err(Failure::usage("densities must lie in [0, 1]"));
            }
            let params = GenerateParams {
                height,
                width,
                obstacle_density: obstacles,
                priority_density: priorities,
                max_priority,
                stations,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map = generate_map(&params, &mut rng).map_err(HarnessError::from)?;
            let text = map.render();
            match out {
                Some(p) => fs::write(&p, &text).map_err(|e| io_failure(&p, e))?,
                None => print!("{text}"),
            }
            Ok(())
        }
    }
}

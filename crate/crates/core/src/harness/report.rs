use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{aggregate, run_episode, Aggregate, Config, EpisodeResult, EpisodeSpec, EventLine, HarnessError, Recording};
use crate::derive_seed;
use crate::map::GridMap;
use crate::nn::PolicyModel;

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: String,
    pub agents: usize,
    pub seed: u64,
    pub horizon: usize,
    pub burnin: usize,
    pub require_success: bool,
    pub episodes: usize,
    /// Episodes run, including ones discarded by `require_success`.
    pub attempted: usize,
    /// Battery failures per agent-episode over every attempted episode.
    pub attempted_failure_rate: f64,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub report: RunReport,
    /// Every attempted episode in seed order.
    pub episodes: Vec<EpisodeResult>,
    /// Whether each attempted episode enters the aggregate.
    pub counted: Vec<bool>,
}

/// Runs the evaluation battery described by `cfg.eval`. Episode `i` is
/// seeded with `derive_seed(cfg.eval.seed, i)`; episodes run in parallel
/// and are folded in seed order.
pub fn evaluate(cfg: &Config, map: Arc<GridMap>, model: Option<&PolicyModel>, record: Recording) -> Result<RunOutcome, HarnessError> {
    let ev = &cfg.eval;
    if ev.episodes == 0 {
        return Err(HarnessError::InsufficientSamples(0));
    }
    let run = |i: usize| {
        run_episode(&EpisodeSpec {
            map: map.clone(),
            agents: cfg.env.agents,
            env: cfg.env.params,
            rewards: &cfg.rewards,
            encoding: cfg.env.encoding,
            strategy: &cfg.strategy,
            model,
            horizon: ev.horizon,
            burnin: ev.burnin,
            seed: derive_seed(ev.seed, i as u64),
            record,
        })
    };
    let mut episodes: Vec<EpisodeResult> = Vec::new();
    let mut counted = Vec::new();
    let mut kept = 0;
    let cap = if ev.require_success { ev.max_attempts.max(ev.episodes) } else { ev.episodes };
    while kept < ev.episodes && episodes.len() < cap {
        let start = episodes.len();
        let want = if ev.require_success { ev.episodes - kept } else { ev.episodes };
        let end = (start + want).min(cap);
        let batch = (start..end).into_par_iter().map(run).collect::<Result<Vec<_>, _>>()?;
        for r in batch {
            let ok = !ev.require_success || r.metrics.battery_failures == 0;
            if ok && kept < ev.episodes {
                kept += 1;
                counted.push(true);
            } else {
                counted.push(false);
            }
            episodes.push(r);
        }
    }
    let samples: Vec<_> = episodes
        .iter()
        .zip(&counted)
        .filter(|(_, &c)| c)
        .map(|(r, _)| r.metrics.clone())
        .collect();
    let agg = aggregate(&samples, ev.repeats)?;
    let failures: usize = episodes.iter().map(|r| r.metrics.battery_failures).sum();
    let report = RunReport {
        strategy: cfg.strategy.kind.name().to_string(),
        agents: cfg.env.agents,
        seed: ev.seed,
        horizon: ev.horizon,
        burnin: ev.burnin,
        require_success: ev.require_success,
        episodes: samples.len(),
        attempted: episodes.len(),
        attempted_failure_rate: failures as f64 / (episodes.len() * cfg.env.agents) as f64,
        aggregate: agg,
    };
    Ok(RunOutcome { report, episodes, counted })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WriteOptions {
    pub events: bool,
    pub csv: bool,
}

#[derive(Serialize)]
struct EpisodeLine<'a> {
    episode: usize,
    counted: bool,
    #[serde(flatten)]
    metrics: &'a super::EpisodeMetrics,
}

/// Writes `metrics.json`, `episodes.jsonl` and, when asked and recorded,
/// `events.jsonl` and `steps.csv` into `dir`.
pub fn write_run(dir: &Path, outcome: &RunOutcome, opts: WriteOptions) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(&outcome.report).expect("report serializes");
    fs::write(dir.join("metrics.json"), json + "\n")?;
    let mut eps = BufWriter::new(File::create(dir.join("episodes.jsonl"))?);
    for (i, (r, &c)) in outcome.episodes.iter().zip(&outcome.counted).enumerate() {
        let line = EpisodeLine {
            episode: i,
            counted: c,
            metrics: &r.metrics,
        };
        serde_json::to_writer(&mut eps, &line).expect("episode serializes");
        eps.write_all(b"\n")?;
    }
    eps.flush()?;
    if opts.events {
        let mut out = BufWriter::new(File::create(dir.join("events.jsonl"))?);
        for (i, r) in outcome.episodes.iter().enumerate() {
            for log in &r.events {
                let line = EventLine {
                    episode: i,
                    log: log.clone(),
                };
                serde_json::to_writer(&mut out, &line).expect("event serializes");
                out.write_all(b"\n")?;
            }
        }
        out.flush()?;
    }
    if opts.csv {
        let mut out = BufWriter::new(File::create(dir.join("steps.csv"))?);
        writeln!(out, "episode,step,mean_idleness,max_idleness")?;
        for (i, r) in outcome.episodes.iter().enumerate() {
            for (t, (mean, max)) in r.trace.iter().enumerate() {
                writeln!(out, "{i},{},{mean},{max}", t + 1)?;
            }
        }
        out.flush()?;
    }
    Ok(())
}

/// One strategy's line of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub strategy: String,
    pub agents: usize,
    pub aggregate: Aggregate,
}

/// Comparison table with mean / standard deviation columns.
pub fn compare_markdown(rows: &[CompareRow]) -> String {
    let mut s = String::from(
        "| strategy | agents | AVG idleness μ | AVG idleness σ | MAX̄ idleness μ | MAX̄ idleness σ | collisions μ | collisions σ | failure rate |\n\
         |---|---|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        let a = &r.aggregate;
        let _ = writeln!(
            s,
            "| {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.3e} |",
            r.strategy,
            r.agents,
            a.avg_idleness.mean,
            a.avg_idleness.std,
            a.max_bar_idleness.mean,
            a.max_bar_idleness.std,
            a.collisions.mean,
            a.collisions.std,
            a.battery_failure_rate
        );
    }
    s
}

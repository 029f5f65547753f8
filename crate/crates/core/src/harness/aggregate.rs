use serde::{Deserialize, Serialize};

use super::{EpisodeMetrics, HarnessError};

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(xs: &[f64]) -> Result<Stat, HarnessError> {
    if xs.len() < 2 {
        return Err(HarnessError::InsufficientSamples(xs.len()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(Stat { mean, std: var.sqrt() })
}

/// Summary over a set of episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub episodes: usize,
    pub repeats: usize,
    pub avg_idleness: Stat,
    pub max_bar_idleness: Stat,
    pub collisions: Stat,
    pub battery_failures: Stat,
    /// Failures per agent-episode.
    pub battery_failure_rate: f64,
    /// Pooled battery fractions at swap start; `None` with fewer than two.
    pub recharge_battery: Option<Stat>,
}

/// Per-metric mean and spread. With `repeats > 1` the episodes are split
/// into that many equal consecutive groups and the spread is taken over
/// the group means.
pub fn aggregate(samples: &[EpisodeMetrics], repeats: usize) -> Result<Aggregate, HarnessError> {
    let repeats = repeats.max(1);
    if samples.len() < 2 || samples.len() < repeats {
        return Err(HarnessError::InsufficientSamples(samples.len()));
    }
    if samples.len() % repeats != 0 {
        return Err(HarnessError::Config(format!(
            "{} episodes do not split into {repeats} equal groups",
            samples.len()
        )));
    }
    let stat = |f: &dyn Fn(&EpisodeMetrics) -> f64| -> Result<Stat, HarnessError> {
        let values: Vec<f64> = samples.iter().map(f).collect();
        if repeats == 1 {
            return mean_std(&values);
        }
        let size = values.len() / repeats;
        let means: Vec<f64> = values.chunks(size).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        mean_std(&means)
    };
    let agent_episodes: usize = samples.iter().map(|m| m.agents).sum();
    let failures: usize = samples.iter().map(|m| m.battery_failures).sum();
    let pooled: Vec<f64> = samples.iter().flat_map(|m| m.recharge_battery_samples.iter().copied()).collect();
    Ok(Aggregate {
        episodes: samples.len(),
        repeats,
        avg_idleness: stat(&|m| m.avg_idleness)?,
        max_bar_idleness: stat(&|m| m.max_bar_idleness)?,
        collisions: stat(&|m| m.collisions as f64)?,
        battery_failures: stat(&|m| m.battery_failures as f64)?,
        battery_failure_rate: failures as f64 / agent_episodes.max(1) as f64,
        recharge_battery: mean_std(&pooled).ok(),
    })
}

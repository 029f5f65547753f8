use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::env::StepLog;

/// One line of `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventLine {
    pub episode: usize,
    #[serde(flatten)]
    pub log: StepLog,
}

/// Parses an `events.jsonl` document; blank lines are skipped.
pub fn parse_event_log(text: &str) -> Result<Vec<EventLine>, HarnessError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HarnessError::EventLog {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// `(avg, max_bar)` of one episode recomputed from its logged steps, using
/// the same accumulation order as the episode runner.
pub fn recompute_idleness_metrics(lines: &[EventLine], episode: usize, burnin: usize) -> Option<(f64, f64)> {
    let mut sum_mean = 0.0;
    let mut sum_max = 0.0;
    let mut n = 0usize;
    for l in lines.iter().filter(|l| l.episode == episode && l.log.step as usize > burnin) {
        sum_mean += l.log.idleness_mean;
        sum_max += l.log.idleness_max;
        n += 1;
    }
    (n > 0).then(|| (sum_mean / n as f64, sum_max / n as f64))
}

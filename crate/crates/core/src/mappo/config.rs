use serde::{Deserialize, Serialize};

use super::MappoError;
use crate::nn::{AdamParams, ArchConfig};

/// Agent counts of the parallel episodes from `from_episode` onwards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumStage {
    pub from_episode: u64,
    pub agents: Vec<usize>,
}

/// Step-wise learning rate: `initial` before `switch_episode`, `after` from then on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    pub after: f64,
    pub switch_episode: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 2e-4,
            after: 1e-4,
            switch_episode: 1000,
        }
    }
}

impl LrSchedule {
    pub fn at(&self, episode: u64) -> f64 {
        if episode < self.switch_episode {
            self.initial
        } else {
            self.after
        }
    }
}

/// Trainer settings. One training episode runs `parallel_episodes` lanes
/// side by side, each for `horizon` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    /// Minibatches per epoch.
    pub batches: usize,
    pub epochs: usize,
    pub entropy_coef: f64,
    /// Weight of the critic loss in the reported total.
    pub value_coef: f64,
    pub lr: LrSchedule,
    pub episodes: u64,
    pub horizon: usize,
    pub parallel_episodes: usize,
    pub curriculum: Vec<CurriculumStage>,
    /// Truncation length of backpropagation through time.
    pub bptt_len: usize,
    /// Write a checkpoint every this many episodes (0 = only at the end).
    pub checkpoint_every: u64,
    pub arch: ArchConfig,
    pub adam: AdamParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let stage = |from_episode, agents: [usize; 8]| CurriculumStage {
            from_episode,
            agents: agents.to_vec(),
        };
        Self {
            gamma: 0.95,
            gae_lambda: 0.95,
            clip_eps: 0.15,
            batches: 50,
            epochs: 3,
            entropy_coef: 0.002,
            value_coef: 0.5,
            lr: LrSchedule::default(),
            episodes: 1500,
            horizon: 5000,
            parallel_episodes: 8,
            curriculum: vec![
                stage(0, [1, 1, 1, 1, 2, 2, 2, 2]),
                stage(200, [1, 1, 1, 1, 2, 2, 3, 3]),
                stage(400, [1, 1, 1, 1, 2, 3, 3, 4]),
                stage(600, [1, 1, 1, 1, 2, 3, 4, 5]),
            ],
            bptt_len: 16,
            checkpoint_every: 100,
            arch: ArchConfig::default(),
            adam: AdamParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MappoError> {
        let bad = |m: &str| Err(MappoError::InvalidConfig(m.to_string()));
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.gamma) || !unit(self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in (0, 1]");
        }
        if !(self.clip_eps > 0.0) || !self.clip_eps.is_finite() {
            return bad("clip_eps must be > 0");
        }
        if self.batches == 0 || self.epochs == 0 || self.bptt_len == 0 {
            return bad("batches, epochs and bptt_len must be >= 1");
        }
        if !(self.entropy_coef >= 0.0) || !(self.value_coef >= 0.0) {
            return bad("loss coefficients must be >= 0");
        }
        if !(self.lr.initial > 0.0) || !(self.lr.after > 0.0) {
            return bad("learning rates must be > 0");
        }
        if self.horizon == 0 || self.parallel_episodes == 0 {
            return bad("horizon and parallel_episodes must be >= 1");
        }
        if self.curriculum.is_empty() || self.curriculum[0].from_episode != 0 {
            return bad("curriculum must start at episode 0");
        }
        for pair in self.curriculum.windows(2) {
            if pair[1].from_episode <= pair[0].from_episode {
                return bad("curriculum stages must be strictly increasing");
            }
        }
        for s in &self.curriculum {
            if s.agents.len() != self.parallel_episodes {
                return bad("each curriculum stage needs one agent count per parallel episode");
            }
            if s.agents.iter().any(|&n| n == 0) {
                return bad("agent counts must be >= 1");
            }
        }
        Ok(())
    }

    /// Agent counts of the parallel episodes at training episode `episode`.
    pub fn stage_agents(&self, episode: u64) -> &[usize] {
        let stage = self
            .curriculum
            .iter()
            .rev()
            .find(|s| s.from_episode <= episode)
            .unwrap_or(&self.curriculum[0]);
        &stage.agents
    }

    /// Largest agent count anywhere in the curriculum; sizes the critic.
    pub fn max_agents(&self) -> usize {
        self.curriculum.iter().flat_map(|s| s.agents.iter().copied()).max().unwrap_or(1)
    }
}

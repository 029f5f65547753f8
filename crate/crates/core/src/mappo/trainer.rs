use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::rollout::{collect_rollouts, reconstruct_offline_segments, LaneSpec, RolloutContext};
use super::update::{update, UpdateStats};
use super::{MappoError, TrainConfig};
use crate::derive_seed;
use crate::env::EnvParams;
use crate::map::GridMap;
use crate::nn::{save_checkpoint, Adam, InputShape, PolicyModel};
use crate::observe::EncodingParams;
use crate::rewards::RewardParams;

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationMetrics {
    pub episode: u64,
    pub agents: Vec<usize>,
    /// Mean over lanes of the per-agent cumulative reward.
    pub mean_reward: f64,
    pub lane_rewards: Vec<f64>,
    pub collisions: usize,
    pub failures: usize,
    pub swaps: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub update: UpdateStats,
}

/// Alternates parallel rollouts with exclusive PPO updates.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub map: Arc<GridMap>,
    pub env: EnvParams,
    pub rewards: RewardParams,
    pub encoding: EncodingParams,
    pub model: PolicyModel,
    actor_opt: Adam,
    critic_opt: Adam,
    rng: ChaCha8Rng,
    seed: u64,
    /// Next training episode.
    pub episode: u64,
}

impl Trainer {
    pub fn new(
        cfg: TrainConfig,
        map: Arc<GridMap>,
        env: EnvParams,
        rewards: RewardParams,
        encoding: EncodingParams,
        seed: u64,
    ) -> Result<Self, MappoError> {
        cfg.validate()?;
        env.validate()?;
        rewards.validate().map_err(|e| MappoError::InvalidConfig(e.to_string()))?;
        let shape = InputShape {
            height: map.height(),
            width: map.width(),
            max_agents: cfg.max_agents(),
        };
        if cfg.max_agents() > map.vertices().len() {
            return Err(MappoError::InvalidConfig("curriculum needs more agents than the map has vertices".into()));
        }
        let model = PolicyModel::new(&cfg.arch, shape, derive_seed(seed, u64::MAX))?;
        let actor_opt = Adam::new(model.actor_params.len(), cfg.adam);
        let critic_opt = Adam::new(model.critic_params.len(), cfg.adam);
        Ok(Self {
            cfg,
            map,
            env,
            rewards,
            encoding,
            model,
            actor_opt,
            critic_opt,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX - 1)),
            seed,
            episode: 0,
        })
    }

    /// Lane specs of training episode `episode`.
    pub fn lanes(&self, episode: u64) -> Vec<LaneSpec> {
        let base = derive_seed(self.seed, episode);
        self.cfg
            .stage_agents(episode)
            .iter()
            .enumerate()
            .map(|(i, &n_agents)| LaneSpec {
                n_agents,
                seed: derive_seed(base, i as u64),
            })
            .collect()
    }

    /// Collects one training episode on every lane, then updates.
    pub fn run_episode(&mut self) -> Result<IterationMetrics, MappoError> {
        let episode = self.episode;
        let lanes = self.lanes(episode);
        let ctx = RolloutContext {
            map: self.map.clone(),
            env: self.env,
            rewards: self.rewards,
            encoding: self.encoding,
            model: &self.model,
            horizon: self.cfg.horizon,
            bptt_len: self.cfg.bptt_len,
        };
        let mut buffer = reconstruct_offline_segments(collect_rollouts(&ctx, &lanes)?);
        buffer.compute_advantages(self.cfg.gamma, self.cfg.gae_lambda)?;
        let lane_rewards: Vec<f64> = buffer.lanes.iter().map(|l| l.mean_agent_return()).collect();
        let lr = self.cfg.lr.at(episode);
        let stats = update(
            &mut self.model,
            &mut self.actor_opt,
            &mut self.critic_opt,
            &buffer,
            &self.cfg,
            &self.encoding,
            lr,
            &mut self.rng,
        )?;
        self.episode += 1;
        Ok(IterationMetrics {
            episode,
            agents: lanes.iter().map(|l| l.n_agents).collect(),
            mean_reward: lane_rewards.iter().sum::<f64>() / lane_rewards.len() as f64,
            lane_rewards,
            collisions: buffer.lanes.iter().map(|l| l.collisions).sum(),
            failures: buffer.lanes.iter().map(|l| l.failures).sum(),
            swaps: buffer.lanes.iter().map(|l| l.swaps).sum(),
            lr,
            update: stats,
        })
    }

    /// Runs the remaining episodes. With a run directory, writes
    /// `config.json`, appends `metrics.jsonl` and saves checkpoints under
    /// `checkpoints/`. A non-finite loss dumps its batch to
    /// `nonfinite_batch.json` before the error is returned.
    pub fn train(&mut self, run_dir: Option<&Path>, mut on_episode: impl FnMut(&IterationMetrics)) -> Result<Vec<IterationMetrics>, MappoError> {
        let mut metrics_out = match run_dir {
            Some(dir) => {
                fs::create_dir_all(dir.join("checkpoints"))?;
                let cfg = serde_json::to_string_pretty(&self.cfg).expect("config serializes");
                fs::write(dir.join("config.json"), cfg + "\n")?;
                Some(BufWriter::new(File::create(dir.join("metrics.jsonl"))?))
            }
            None => None,
        };
        let mut all = Vec::new();
        while self.episode < self.cfg.episodes {
            let m = match self.run_episode() {
                Ok(m) => m,
                Err(MappoError::NonFiniteLoss { dump }) => {
                    if let Some(dir) = run_dir {
                        fs::write(dir.join("nonfinite_batch.json"), &dump)?;
                    }
                    return Err(MappoError::NonFiniteLoss { dump });
                }
                Err(e) => return Err(e),
            };
            if let Some(out) = metrics_out.as_mut() {
                serde_json::to_writer(&mut *out, &m).expect("metrics serialize");
                out.write_all(b"\n")?;
                out.flush()?;
            }
            if let Some(dir) = run_dir {
                let every = self.cfg.checkpoint_every;
                if every > 0 && self.episode % every == 0 {
                    save_checkpoint(&checkpoint_path(dir, self.episode), &self.model, Some(self.episode))?;
                }
            }
            on_episode(&m);
            all.push(m);
        }
        if let Some(dir) = run_dir {
            save_checkpoint(&dir.join("checkpoints").join("final.ptck"), &self.model, Some(self.episode))?;
        }
        Ok(all)
    }
}

pub fn checkpoint_path(dir: &Path, episode: u64) -> PathBuf {
    dir.join("checkpoints").join(format!("ep{episode:06}.ptck"))
}

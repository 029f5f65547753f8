use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::gae::compute_gae;
use super::MappoError;
use crate::derive_seed;
use crate::env::{AgentStatus, EnvParams, EventKind, WorldState};
use crate::map::{Action, GridMap};
use crate::nn::dist::sample;
use crate::nn::{NetInput, PolicyModel};
use crate::observe::{encode_actor_view, encode_critic_view, EncodingParams};
use crate::rewards::{step_rewards, RewardParams};

/// Immutable inputs shared by every lane of a rollout.
#[derive(Debug, Clone)]
pub struct RolloutContext<'a> {
    pub map: Arc<GridMap>,
    pub env: EnvParams,
    pub rewards: RewardParams,
    pub encoding: EncodingParams,
    /// Weight snapshot the lanes act with.
    pub model: &'a PolicyModel,
    pub horizon: usize,
    pub bptt_len: usize,
}

/// Agent count and seed of one parallel episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LaneSpec {
    pub n_agents: usize,
    pub seed: u64,
}

/// One agent-step. Offline records belong to a swapping agent: they carry
/// a reward and, once reconstructed, a critic state, but never a policy term.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub online: bool,
    /// Recurrent state was reset before this step (fresh agent after a swap).
    pub reset: bool,
    /// Snapshot index the critic reads; `None` keeps the record out of the loss.
    pub state: Option<usize>,
    pub p_msg: f64,
    pub p_move: f64,
    pub message: u8,
    pub action: Action,
    pub mask: [bool; Action::COUNT],
    pub reward: f64,
    pub value: Option<f64>,
    pub advantage: f64,
    pub ret: f64,
}

/// Consecutive records of one agent, from step 0 until the horizon or the
/// agent's battery failure.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub agent: usize,
    pub records: Vec<StepRecord>,
    /// Recurrent state before record `k * bptt_len`.
    pub chunk_states: Vec<Vec<f64>>,
}

/// World state before a step, plus the messages sent during it.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub world: WorldState,
    pub messages: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct Lane {
    pub spec: LaneSpec,
    pub snapshots: Vec<Snapshot>,
    /// Critic value of every snapshot.
    pub values: Vec<f64>,
    pub tracks: Vec<AgentTrack>,
    pub collisions: usize,
    pub failures: usize,
    pub swaps: usize,
}

impl Lane {
    /// Cumulative reward averaged over the lane's agents.
    pub fn mean_agent_return(&self) -> f64 {
        let total: f64 = self.tracks.iter().flat_map(|t| &t.records).map(|r| r.reward).sum();
        total / self.tracks.len().max(1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub lanes: Vec<Lane>,
    pub horizon: usize,
    pub bptt_len: usize,
}

impl RolloutBuffer {
    pub fn records(&self) -> impl Iterator<Item = &StepRecord> {
        self.lanes.iter().flat_map(|l| &l.tracks).flat_map(|t| &t.records)
    }

    pub fn len(&self) -> usize {
        self.records().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Actor input of an online record.
    pub fn actor_input(&self, lane: usize, agent: usize, step: usize, encoding: &EncodingParams) -> Result<NetInput, MappoError> {
        let snap = &self.lanes[lane].snapshots[step];
        let view = encode_actor_view(&snap.world, agent, Some(&snap.messages), encoding)?;
        Ok(NetInput::from_view(&view))
    }

    /// Critic input of snapshot `state`.
    pub fn critic_input(&self, lane: usize, state: usize, max_agents: usize, encoding: &EncodingParams) -> Result<NetInput, MappoError> {
        let view = encode_critic_view(&self.lanes[lane].snapshots[state].world, max_agents, encoding)?;
        Ok(NetInput::from_view(&view))
    }

    /// Fills advantages and returns of every record; tracks end in a
    /// terminal (zero) bootstrap at the horizon or at a failure.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) -> Result<(), MappoError> {
        for lane in &mut self.lanes {
            for track in &mut lane.tracks {
                let rewards: Vec<f64> = track.records.iter().map(|r| r.reward).collect();
                let values: Vec<f64> = track.records.iter().map(|r| lane.values[r.step]).collect();
                let (adv, ret) = compute_gae(&rewards, &values, 0.0, gamma, lambda)?;
                for (r, (a, g)) in track.records.iter_mut().zip(adv.into_iter().zip(ret)) {
                    r.advantage = a;
                    r.ret = g;
                }
            }
        }
        Ok(())
    }
}

/// Runs every lane for the context's horizon with the snapshot weights.
/// Lanes run in parallel; each owns its world and random stream, so the
/// buffer depends only on the lane seeds.
pub fn collect_rollouts(ctx: &RolloutContext<'_>, lanes: &[LaneSpec]) -> Result<RolloutBuffer, MappoError> {
    let lanes = lanes
        .par_iter()
        .map(|spec| run_lane(ctx, *spec))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RolloutBuffer {
        lanes,
        horizon: ctx.horizon,
        bptt_len: ctx.bptt_len,
    })
}

fn run_lane(ctx: &RolloutContext<'_>, spec: LaneSpec) -> Result<Lane, MappoError> {
    let model = ctx.model;
    let max_agents = model.shape.max_agents;
    let c_d = ctx.rewards.difference_scale(max_agents);
    let mut world = WorldState::reset(ctx.map.clone(), spec.n_agents, ctx.env, spec.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 1));
    let n = spec.n_agents;
    let initial = model.actor.initial_state();
    let mut states = vec![initial.clone(); n];
    let mut pending_reset = vec![false; n];
    let mut done = vec![false; n];
    let mut tracks: Vec<AgentTrack> = (0..n)
        .map(|agent| AgentTrack {
            agent,
            records: Vec::with_capacity(ctx.horizon),
            chunk_states: Vec::new(),
        })
        .collect();
    let mut lane = Lane {
        spec,
        snapshots: Vec::with_capacity(ctx.horizon),
        values: Vec::with_capacity(ctx.horizon),
        tracks: Vec::new(),
        collisions: 0,
        failures: 0,
        swaps: 0,
    };

    for t in 0..ctx.horizon {
        let active: Vec<usize> = world.active_agents().map(|a| a.id).collect();
        let mut messages = vec![1u8; n];
        let mut p_msg = vec![1.0; n];
        for &id in &active {
            let view = encode_actor_view(&world, id, None, &ctx.encoding)?;
            let probs = model.actor.message_distribution(&model.actor_params, &NetInput::from_view(&view), &states[id])?;
            let k = sample(&probs, &mut rng);
            messages[id] = k as u8 + 1;
            p_msg[id] = probs[k];
        }
        let mut actions = vec![Action::Stay; n];
        let mut p_move = vec![1.0; n];
        let mut masks = vec![[true; Action::COUNT]; n];
        let mut next_states = states.clone();
        for &id in &active {
            let view = encode_actor_view(&world, id, Some(&messages), &ctx.encoding)?;
            let input = NetInput::from_view(&view);
            let out = model.actor.forward_actor(&model.actor_params, &input, &states[id])?;
            let k = sample(&out.move_probs, &mut rng);
            actions[id] = Action::from_index(k).expect("five actions");
            p_move[id] = out.move_probs[k];
            masks[id] = input.mask;
            next_states[id] = out.new_state;
        }
        let critic_view = encode_critic_view(&world, max_agents, &ctx.encoding)?;
        let value = model.critic.forward_critic(&model.critic_params, &NetInput::from_view(&critic_view))?;
        lane.values.push(value);
        lane.snapshots.push(Snapshot {
            world: world.clone(),
            messages: messages.clone(),
        });

        let outcome = world.step(&messages, &actions)?;
        lane.collisions += outcome.collisions;
        let rewards = step_rewards(&world, &outcome, &ctx.rewards, c_d);
        for id in 0..n {
            if done[id] {
                continue;
            }
            let track = &mut tracks[id];
            if t % ctx.bptt_len == 0 {
                let carried = if pending_reset[id] { initial.clone() } else { states[id].clone() };
                track.chunk_states.push(carried);
            }
            let online = outcome.acted[id];
            track.records.push(StepRecord {
                step: t,
                online,
                reset: online && pending_reset[id],
                state: online.then_some(t),
                p_msg: p_msg[id],
                p_move: p_move[id],
                message: messages[id],
                action: actions[id],
                mask: masks[id],
                reward: rewards[id].map_or(0.0, |r| r.total),
                value: online.then_some(value),
                advantage: 0.0,
                ret: 0.0,
            });
            if online {
                if pending_reset[id] {
                    pending_reset[id] = false;
                }
                states[id] = std::mem::take(&mut next_states[id]);
            }
        }
        for e in &outcome.events {
            match e.kind {
                EventKind::StartedSwap { .. } => lane.swaps += 1,
                EventKind::Redeployed => {
                    pending_reset[e.agent] = true;
                    states[e.agent] = initial.clone();
                }
                EventKind::BatteryFailed => {
                    lane.failures += 1;
                    done[e.agent] = true;
                }
                _ => {}
            }
        }
        debug_assert!(world.agents().iter().all(|a| a.status != AgentStatus::Failed || done[a.id]));
    }
    lane.tracks = tracks;
    Ok(lane)
}

/// Gives each offline record the critic state and value of an online
/// record of the same lane and step. Steps where nobody was online stay
/// unreconstructed and are left out of the loss.
pub fn reconstruct_offline_segments(mut buffer: RolloutBuffer) -> RolloutBuffer {
    for lane in &mut buffer.lanes {
        let steps = lane.snapshots.len();
        let mut source: Vec<Option<(usize, f64)>> = vec![None; steps];
        for track in &lane.tracks {
            for r in &track.records {
                if let (true, Some(s), Some(v)) = (r.online, r.state, r.value) {
                    source[r.step].get_or_insert((s, v));
                }
            }
        }
        for track in &mut lane.tracks {
            for r in track.records.iter_mut().filter(|r| !r.online) {
                if let Some((s, v)) = source[r.step] {
                    r.state = Some(s);
                    r.value = Some(v);
                }
            }
        }
    }
    buffer
}

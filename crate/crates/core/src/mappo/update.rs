use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use super::loss::{clipped_surrogate, joint_ratio};
use super::rollout::RolloutBuffer;
use super::{MappoError, TrainConfig};
use crate::nn::dist::{entropy, entropy_grad, log_prob_grad};
use crate::nn::{ActorTape, Adam, PolicyModel};
use crate::observe::EncodingParams;

/// A window of at most `bptt_len` consecutive records of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ChunkRef {
    pub lane: usize,
    pub track: usize,
    pub start: usize,
}

/// Loss pieces of one minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossParts {
    /// Clipped surrogate minus the entropy bonus.
    pub actor: f64,
    pub critic: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub policy_terms: usize,
    pub value_terms: usize,
}

/// Statistics of one call to [`update`], averaged over minibatches.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub minibatches: usize,
}

pub fn chunk_refs(buffer: &RolloutBuffer) -> Vec<ChunkRef> {
    let mut out = Vec::new();
    for (l, lane) in buffer.lanes.iter().enumerate() {
        for (t, track) in lane.tracks.iter().enumerate() {
            for start in (0..track.records.len()).step_by(buffer.bptt_len) {
                let end = (start + buffer.bptt_len).min(track.records.len());
                if track.records[start..end].iter().any(|r| r.state.is_some()) {
                    out.push(ChunkRef { lane: l, track: t, start });
                }
            }
        }
    }
    out
}

/// Minibatch loss with gradients for actor and critic parameters.
///
/// The actor loss is the mean over online records of the negated clipped
/// surrogate on the joint message-move ratio, minus `entropy_coef` times
/// both heads' entropies. Advantages are normalized over the minibatch. The
/// critic loss is `value_coef` times the mean of the value-clipped squared
/// error against the returns, over every reconstructed record.
pub fn loss_and_gradients(
    model: &PolicyModel,
    buffer: &RolloutBuffer,
    chunks: &[ChunkRef],
    cfg: &TrainConfig,
    encoding: &EncodingParams,
) -> Result<(LossParts, Vec<f64>, Vec<f64>), MappoError> {
    let max_agents = model.shape.max_agents;
    let window = |c: &ChunkRef| {
        let recs = &buffer.lanes[c.lane].tracks[c.track].records;
        &recs[c.start..(c.start + buffer.bptt_len).min(recs.len())]
    };
    let policy_adv: Vec<f64> = chunks
        .iter()
        .flat_map(|c| window(c).iter())
        .filter(|r| r.online && r.state.is_some())
        .map(|r| r.advantage)
        .collect();
    let n_pol = policy_adv.len();
    let n_val = chunks.iter().flat_map(|c| window(c).iter()).filter(|r| r.state.is_some()).count();
    let mean = policy_adv.iter().sum::<f64>() / n_pol.max(1) as f64;
    let var = policy_adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n_pol.max(1) as f64;
    let std = var.sqrt() + 1e-8;

    let mut parts = LossParts {
        policy_terms: n_pol,
        value_terms: n_val,
        ..Default::default()
    };
    let mut g_actor = vec![0.0; model.actor_params.len()];
    let mut g_critic = vec![0.0; model.critic_params.len()];
    let wp = 1.0 / n_pol.max(1) as f64;
    let wv = cfg.value_coef / n_val.max(1) as f64;
    let initial = model.actor.initial_state();
    let mut clipped = 0usize;

    for c in chunks {
        let track = &buffer.lanes[c.lane].tracks[c.track];
        let mut tape = ActorTape::new(track.chunk_states[c.start / buffer.bptt_len].clone());
        let mut d_msg = Vec::new();
        let mut d_move = Vec::new();
        for r in window(c) {
            if r.online && r.state.is_some() {
                if r.reset {
                    tape.reset_state(initial.clone());
                }
                let input = buffer.actor_input(c.lane, track.agent, r.step, encoding)?;
                let out = tape.record(&model.actor, &model.actor_params, &input)?;
                let m = usize::from(r.message - 1);
                let a = r.action.index();
                let ratio = joint_ratio((r.p_msg, r.p_move), (out.message_probs[m], out.move_probs[a]))?;
                let adv = (r.advantage - mean) / std;
                let s = clipped_surrogate(ratio, adv, cfg.clip_eps);
                let (h_msg, h_move) = (entropy(&out.message_probs), entropy(&out.move_probs));
                parts.actor += wp * (s.loss - cfg.entropy_coef * (h_msg + h_move));
                parts.entropy += wp * (h_msg + h_move);
                parts.mean_ratio += wp * ratio;
                clipped += usize::from(s.clipped);
                let dl = wp * s.d_log_ratio;
                let de = -wp * cfg.entropy_coef;
                let gm: Vec<f64> = log_prob_grad(&out.message_probs, m, None)
                    .iter()
                    .zip(entropy_grad(&out.message_probs))
                    .map(|(l, e)| dl * l + de * e)
                    .collect();
                let ga: Vec<f64> = log_prob_grad(&out.move_probs, a, Some(&input.mask))
                    .iter()
                    .zip(entropy_grad(&out.move_probs))
                    .map(|(l, e)| dl * l + de * e)
                    .collect();
                d_msg.push(gm);
                d_move.push(ga);
            }
            if let (Some(state), Some(v_old)) = (r.state, r.value) {
                let input = buffer.critic_input(c.lane, state, max_agents, encoding)?;
                let (v, cache) = model.critic.forward_cached(&model.critic_params, &input)?;
                let delta = v - v_old;
                let v_clip = v_old + delta.clamp(-cfg.clip_eps, cfg.clip_eps);
                let (l1, l2) = ((v - r.ret).powi(2), (v_clip - r.ret).powi(2));
                let d = if l1 >= l2 {
                    2.0 * (v - r.ret)
                } else if delta.abs() < cfg.clip_eps {
                    2.0 * (v_clip - r.ret)
                } else {
                    0.0
                };
                parts.critic += wv * l1.max(l2);
                model.critic.backward(&model.critic_params, &cache, wv * d, &mut g_critic);
            }
        }
        if !tape.is_empty() {
            tape.backward(&model.actor, &model.actor_params, &d_msg, &d_move, &mut g_actor)?;
        }
    }
    parts.clip_fraction = clipped as f64 / n_pol.max(1) as f64;
    let finite = parts.actor.is_finite()
        && parts.critic.is_finite()
        && g_actor.iter().chain(&g_critic).all(|g| g.is_finite());
    if !finite {
        return Err(MappoError::NonFiniteLoss {
            dump: dump_batch(buffer, chunks, &parts),
        });
    }
    Ok((parts, g_actor, g_critic))
}

fn dump_batch(buffer: &RolloutBuffer, chunks: &[ChunkRef], parts: &LossParts) -> String {
    #[derive(Serialize)]
    struct Row {
        lane: usize,
        agent: usize,
        step: usize,
        online: bool,
        p_msg: f64,
        p_move: f64,
        reward: f64,
        value: Option<f64>,
        advantage: f64,
        ret: f64,
    }
    let rows: Vec<Row> = chunks
        .iter()
        .flat_map(|c| {
            let track = &buffer.lanes[c.lane].tracks[c.track];
            let end = (c.start + buffer.bptt_len).min(track.records.len());
            track.records[c.start..end].iter().map(move |r| Row {
                lane: c.lane,
                agent: track.agent,
                step: r.step,
                online: r.online,
                p_msg: r.p_msg,
                p_move: r.p_move,
                reward: r.reward,
                value: r.value,
                advantage: r.advantage,
                ret: r.ret,
            })
        })
        .collect();
    serde_json::json!({ "loss": parts, "chunks": chunks, "records": rows }).to_string()
}

/// `epochs` passes over the buffer, each split into `batches` shuffled
/// minibatches of recurrent chunks, with one Adam step per minibatch.
/// Advantages and returns must already be filled in.
pub fn update<R: Rng + ?Sized>(
    model: &mut PolicyModel,
    actor_opt: &mut Adam,
    critic_opt: &mut Adam,
    buffer: &RolloutBuffer,
    cfg: &TrainConfig,
    encoding: &EncodingParams,
    lr: f64,
    rng: &mut R,
) -> Result<UpdateStats, MappoError> {
    let mut chunks = chunk_refs(buffer);
    let mut stats = UpdateStats::default();
    if chunks.is_empty() {
        return Ok(stats);
    }
    let n_batches = cfg.batches.min(chunks.len());
    for _ in 0..cfg.epochs {
        chunks.shuffle(rng);
        for b in 0..n_batches {
            let lo = b * chunks.len() / n_batches;
            let hi = (b + 1) * chunks.len() / n_batches;
            let (parts, ga, gc) = loss_and_gradients(model, buffer, &chunks[lo..hi], cfg, encoding)?;
            actor_opt.step(&mut model.actor_params, &ga, lr);
            critic_opt.step(&mut model.critic_params, &gc, lr);
            stats.actor_loss += parts.actor;
            stats.critic_loss += parts.critic;
            stats.entropy += parts.entropy;
            stats.mean_ratio += parts.mean_ratio;
            stats.clip_fraction += parts.clip_fraction;
            stats.minibatches += 1;
        }
    }
    let k = stats.minibatches as f64;
    stats.actor_loss /= k;
    stats.critic_loss /= k;
    stats.entropy /= k;
    stats.mean_ratio /= k;
    stats.clip_fraction /= k;
    Ok(stats)
}

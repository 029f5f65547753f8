use std::sync::Arc;

use patrol::env::{EnvParams, WorldState};
use patrol::map::{parse_map, Action, GridMap};
use patrol::mappo::{
    chunk_refs, collect_rollouts, compute_gae, joint_ratio, loss_and_gradients, reconstruct_offline_segments, update, AgentTrack, Lane,
    LaneSpec, LrSchedule, MappoError, RolloutBuffer, RolloutContext, StepRecord, TrainConfig, Trainer,
};
use patrol::nn::{Adam, ArchConfig, InputShape, PolicyModel};
use patrol::observe::EncodingParams;
use patrol::rewards::RewardParams;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute-force GAE: `A_t = sum_k (gamma lambda)^k delta_{t+k}`.
fn gae_oracle(r: &[f64], v: &[f64], boot: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let value = |t: usize| if t < n { v[t] } else { boot };
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            let mut w = 1.0;
            for k in t..n {
                sum += w * (r[k] + gamma * value(k + 1) - v[k]);
                w *= gamma * lambda;
            }
            sum
        })
        .collect()
}

#[test]
fn gae_matches_brute_force_double_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let n = rng.gen_range(10..=50);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let boot = rng.gen_range(-5.0..5.0);
        let (gamma, lambda) = (rng.gen_range(0.5..=1.0), rng.gen_range(0.0..=1.0));
        let (adv, ret) = compute_gae(&r, &v, boot, gamma, lambda).unwrap();
        let want = gae_oracle(&r, &v, boot, gamma, lambda);
        for t in 0..n {
            assert!((adv[t] - want[t]).abs() < 1e-12, "t={t}: {} vs {}", adv[t], want[t]);
            assert!((ret[t] - (want[t] + v[t])).abs() < 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn joint_ratio_matches_direct_quotient(
        pm0 in 1e-3f64..=1.0, pa0 in 1e-3f64..=1.0, pm1 in 1e-3f64..=1.0, pa1 in 1e-3f64..=1.0,
    ) {
        let r = joint_ratio((pm0, pa0), (pm1, pa1)).unwrap();
        let direct = (pm1 * pa1) / (pm0 * pa0);
        prop_assert!((r - direct).abs() <= 1e-12 * direct.max(1.0));
    }
}

#[test]
fn joint_ratio_rejects_zero_probability() {
    assert!(matches!(joint_ratio((0.5, 0.0), (0.5, 0.5)), Err(MappoError::ZeroProbability(_))));
    assert!(matches!(joint_ratio((0.5, 0.5), (0.0, 0.5)), Err(MappoError::ZeroProbability(_))));
}

fn tiny_map() -> Arc<GridMap> {
    Arc::new(parse_map("C..\n...\n...\n").unwrap())
}

/// 99 actor parameters: one 3x3 convolution to a single feature, one
/// hidden unit, a one-unit recurrent cell and both heads.
fn tiny_model(seed: u64) -> PolicyModel {
    let arch = ArchConfig {
        conv_channels: vec![1],
        hidden: vec![1],
        recurrent: 1,
        separate_trunks: false,
    };
    let shape = InputShape {
        height: 3,
        width: 3,
        max_agents: 2,
    };
    PolicyModel::new(&arch, shape, seed).unwrap()
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        horizon: 12,
        bptt_len: 4,
        batches: 2,
        epochs: 1,
        parallel_episodes: 2,
        ..TrainConfig::default()
    }
}

fn rollouts(model: &PolicyModel, horizon: usize, bptt_len: usize, lanes: &[LaneSpec]) -> RolloutBuffer {
    let ctx = RolloutContext {
        map: tiny_map(),
        env: EnvParams::default(),
        rewards: RewardParams::default(),
        encoding: EncodingParams::default(),
        model,
        horizon,
        bptt_len,
    };
    let mut buf = reconstruct_offline_segments(collect_rollouts(&ctx, lanes).unwrap());
    buf.compute_advantages(0.95, 0.95).unwrap();
    buf
}

fn lanes() -> Vec<LaneSpec> {
    vec![LaneSpec { n_agents: 1, seed: 3 }, LaneSpec { n_agents: 2, seed: 4 }]
}

fn loss_at(model: &PolicyModel, buf: &RolloutBuffer, cfg: &TrainConfig) -> f64 {
    let chunks = chunk_refs(buf);
    let (parts, _, _) = loss_and_gradients(model, buf, &chunks, cfg, &EncodingParams::default()).unwrap();
    parts.actor + parts.critic
}

#[test]
fn full_surrogate_matches_finite_differences() {
    let base = tiny_model(11);
    assert!(base.actor_params.len() <= 100, "{} actor parameters", base.actor_params.len());
    let cfg = small_cfg();
    let buf = rollouts(&base, cfg.horizon, cfg.bptt_len, &lanes());
    // Evaluate away from the behaviour policy so ratios differ from 1 and
    // both clip branches occur.
    let mut model = base.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for p in model.actor_params.iter_mut().chain(model.critic_params.iter_mut()) {
        *p += rng.gen_range(-0.2..0.2);
    }
    let chunks = chunk_refs(&buf);
    let (parts, ga, gc) = loss_and_gradients(&model, &buf, &chunks, &cfg, &EncodingParams::default()).unwrap();
    assert!(parts.policy_terms > 0 && parts.value_terms > 0);
    assert!(parts.clip_fraction > 0.0 && parts.clip_fraction < 1.0, "clip fraction {}", parts.clip_fraction);

    let eps = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..model.actor_params.len() + model.critic_params.len() {
        let probe = |delta: f64| {
            let mut m = model.clone();
            if i < m.actor_params.len() {
                m.actor_params[i] += delta;
            } else {
                let j = i - m.actor_params.len();
                m.critic_params[j] += delta;
            }
            loss_at(&m, &buf, &cfg)
        };
        let fd = (probe(eps) - probe(-eps)) / (2.0 * eps);
        let an = if i < ga.len() { ga[i] } else { gc[i - ga.len()] };
        let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
        worst = worst.max(err);
    }
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn message_head_receives_gradient() {
    let model = tiny_model(2);
    let cfg = small_cfg();
    let mut buf = rollouts(&model, cfg.horizon, cfg.bptt_len, &lanes());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for lane in &mut buf.lanes {
        for track in &mut lane.tracks {
            for r in &mut track.records {
                r.advantage = rng.gen_range(-1.0..1.0);
            }
        }
    }
    let cfg = TrainConfig { entropy_coef: 0.0, ..cfg };
    let chunks = chunk_refs(&buf);
    let (_, ga, _) = loss_and_gradients(&model, &buf, &chunks, &cfg, &EncodingParams::default()).unwrap();
    let head: Vec<f64> = model
        .actor
        .layout
        .tensors
        .iter()
        .filter(|t| t.name.starts_with("msg_head"))
        .flat_map(|t| ga[t.offset..t.offset + t.len()].iter().copied())
        .collect();
    assert_eq!(head.len(), 16 * 2);
    let norm: f64 = head.iter().map(|g| g * g).sum::<f64>().sqrt();
    assert!(norm > 1e-8, "message head gradient norm {norm}");

    // ...and an Adam step actually moves the message head.
    let before = model.actor_params.clone();
    let mut m = model.clone();
    let mut a = Adam::new(m.actor_params.len(), cfg.adam);
    let mut c = Adam::new(m.critic_params.len(), cfg.adam);
    update(&mut m, &mut a, &mut c, &buf, &cfg, &EncodingParams::default(), 1e-3, &mut rng).unwrap();
    let t = m.actor.layout.tensors.iter().find(|t| t.name == "msg_head.weight").unwrap();
    assert!((t.offset..t.offset + t.len()).any(|i| m.actor_params[i] != before[i]));
}

#[test]
fn zero_advantages_leave_only_the_entropy_term() {
    let model = tiny_model(3);
    let cfg = small_cfg();
    let mut buf = rollouts(&model, cfg.horizon, cfg.bptt_len, &lanes());
    for lane in &mut buf.lanes {
        for track in &mut lane.tracks {
            for r in &mut track.records {
                r.advantage = 0.0;
            }
        }
    }
    let chunks = chunk_refs(&buf);
    let (parts, _, _) = loss_and_gradients(&model, &buf, &chunks, &cfg, &EncodingParams::default()).unwrap();
    assert!(parts.entropy > 0.0);
    assert!((parts.actor + cfg.entropy_coef * parts.entropy).abs() < 1e-15);
}

#[test]
fn first_epoch_at_behaviour_policy_never_clips() {
    let mut model = tiny_model(4);
    let cfg = TrainConfig {
        batches: 1,
        epochs: 1,
        ..small_cfg()
    };
    let buf = rollouts(&model, cfg.horizon, cfg.bptt_len, &lanes());
    let mut a = Adam::new(model.actor_params.len(), cfg.adam);
    let mut c = Adam::new(model.critic_params.len(), cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let stats = update(&mut model, &mut a, &mut c, &buf, &cfg, &EncodingParams::default(), 1e-3, &mut rng).unwrap();
    assert_eq!(stats.minibatches, 1);
    assert_eq!(stats.clip_fraction, 0.0);
    assert!((stats.mean_ratio - 1.0).abs() < 1e-12);
}

#[test]
fn zero_learning_rate_keeps_ratio_at_one() {
    let mut model = tiny_model(5);
    let cfg = TrainConfig { epochs: 3, batches: 3, ..small_cfg() };
    let buf = rollouts(&model, cfg.horizon, cfg.bptt_len, &lanes());
    let before = model.clone();
    let mut a = Adam::new(model.actor_params.len(), cfg.adam);
    let mut c = Adam::new(model.critic_params.len(), cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let stats = update(&mut model, &mut a, &mut c, &buf, &cfg, &EncodingParams::default(), 0.0, &mut rng).unwrap();
    assert_eq!(model, before);
    assert!((stats.mean_ratio - 1.0).abs() < 1e-12);
    assert_eq!(stats.clip_fraction, 0.0);
    assert!((0.0..=1.0).contains(&stats.clip_fraction));
}

#[test]
fn rollouts_are_deterministic_and_bounded() {
    let model = tiny_model(6);
    let specs = lanes();
    let a = rollouts(&model, 40, 8, &specs);
    let b = rollouts(&model, 40, 8, &specs);
    for (la, lb) in a.lanes.iter().zip(&b.lanes) {
        assert_eq!(la.tracks, lb.tracks);
        assert_eq!(la.values, lb.values);
    }
    assert!(a.len() <= 40 * specs.len() * 2);
    for lane in &a.lanes {
        assert_eq!(lane.tracks.len(), lane.spec.n_agents);
        for t in &lane.tracks {
            assert!(t.records.len() <= 40);
            for r in &t.records {
                assert!(r.p_msg > 0.0 && r.p_msg <= 1.0 && r.p_move > 0.0 && r.p_move <= 1.0);
                assert!((1..=16).contains(&r.message));
                if r.online {
                    assert!(r.state.is_some() && r.value.is_some());
                    assert!(r.mask[r.action.index()]);
                }
            }
        }
    }
}

/// A lane whose records are written by hand; snapshots only need to exist.
fn scripted_lane(online: &[Vec<bool>]) -> RolloutBuffer {
    let steps = online[0].len();
    let world = WorldState::reset(tiny_map(), online.len(), EnvParams::default(), 0).unwrap();
    let tracks = online
        .iter()
        .enumerate()
        .map(|(agent, flags)| AgentTrack {
            agent,
            records: flags
                .iter()
                .enumerate()
                .map(|(step, &on)| StepRecord {
                    step,
                    online: on,
                    reset: false,
                    state: on.then_some(step),
                    p_msg: 0.5,
                    p_move: 0.5,
                    message: 1,
                    action: Action::Stay,
                    mask: [true; 5],
                    reward: 1.0,
                    value: on.then_some(step as f64 * 0.1),
                    advantage: 0.0,
                    ret: 0.0,
                })
                .collect(),
            // The tiny model has a one-unit recurrent state.
            chunk_states: vec![vec![0.0]; steps.div_ceil(4)],
        })
        .collect();
    RolloutBuffer {
        lanes: vec![Lane {
            spec: LaneSpec {
                n_agents: online.len(),
                seed: 0,
            },
            snapshots: (0..steps)
                .map(|_| patrol::mappo::Snapshot {
                    world: world.clone(),
                    messages: vec![1; online.len()],
                })
                .collect(),
            values: (0..steps).map(|s| s as f64 * 0.1).collect(),
            tracks,
            collisions: 0,
            failures: 0,
            swaps: 0,
        }],
        horizon: steps,
        bptt_len: 4,
    }
}

#[test]
fn reconstruction_without_swaps_is_identity() {
    let buf = scripted_lane(&[vec![true; 10], vec![true; 10]]);
    let before: Vec<StepRecord> = buf.records().cloned().collect();
    let after = reconstruct_offline_segments(buf);
    assert_eq!(after.records().cloned().collect::<Vec<_>>(), before);
}

#[test]
fn swapping_agent_borrows_states_but_not_policy_terms() {
    let mut swapping = vec![true; 120];
    swapping[10..110].iter_mut().for_each(|f| *f = false);
    let buf = reconstruct_offline_segments(scripted_lane(&[swapping, vec![true; 120]]));
    let offline: Vec<&StepRecord> = buf.lanes[0].tracks[0].records.iter().filter(|r| !r.online).collect();
    assert_eq!(offline.len(), 100);
    for r in &offline {
        assert_eq!(r.state, Some(r.step));
        assert_eq!(r.value, Some(r.step as f64 * 0.1));
    }
    // Only online records count as policy terms.
    let cfg = TrainConfig::default();
    let model = tiny_model(0);
    let chunks = chunk_refs(&buf);
    let (parts, _, _) = loss_and_gradients(&model, &buf, &chunks, &cfg, &EncodingParams::default()).unwrap();
    assert_eq!(parts.policy_terms, 120 + 20);
    assert_eq!(parts.value_terms, 240);
}

#[test]
fn steps_with_everyone_offline_are_masked() {
    let mut a = vec![true; 8];
    let mut b = vec![true; 8];
    a[3] = false;
    b[3] = false;
    a[5] = false;
    let buf = reconstruct_offline_segments(scripted_lane(&[a, b]));
    for t in &buf.lanes[0].tracks {
        assert_eq!(t.records[3].state, None);
        assert_eq!(t.records[3].value, None);
    }
    assert_eq!(buf.lanes[0].tracks[0].records[5].state, Some(5));
    let model = tiny_model(0);
    let chunks = chunk_refs(&buf);
    let (parts, _, _) = loss_and_gradients(&model, &buf, &chunks, &TrainConfig::default(), &EncodingParams::default()).unwrap();
    assert_eq!(parts.value_terms, 16 - 2);
    assert_eq!(parts.policy_terms, 16 - 3);
}

#[test]
fn training_statistics_are_reproducible() {
    let run = || {
        let cfg = TrainConfig {
            episodes: 3,
            horizon: 30,
            parallel_episodes: 2,
            batches: 3,
            curriculum: vec![patrol::mappo::CurriculumStage {
                from_episode: 0,
                agents: vec![1, 2],
            }],
            arch: tiny_model(0).arch,
            lr: LrSchedule {
                initial: 1e-3,
                after: 1e-3,
                switch_episode: 10,
            },
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(cfg, tiny_map(), EnvParams::default(), RewardParams::default(), EncodingParams::default(), 7).unwrap();
        let metrics = t.train(None, |_| {}).unwrap();
        (metrics, t.model)
    };
    let (m1, p1) = run();
    let (m2, p2) = run();
    assert_eq!(m1, m2);
    assert_eq!(p1, p2);
    assert_eq!(m1.len(), 3);
    assert!(m1.iter().all(|m| m.agents == vec![1, 2]));
}

#[test]
fn learning_rate_switches_at_episode_1000() {
    let lr = TrainConfig::default().lr;
    assert_eq!(lr.at(999), 2e-4);
    assert_eq!(lr.at(1000), 1e-4);
    let cfg = TrainConfig::default();
    assert_eq!(cfg.stage_agents(0), &[1, 1, 1, 1, 2, 2, 2, 2]);
}

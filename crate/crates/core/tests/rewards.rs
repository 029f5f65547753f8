use std::sync::Arc;

use patrol::env::{EnvParams, WorldState};
use patrol::map::{generate_map, Action, CellKind, GenerateParams};
use patrol::observe::ActionMask;
use patrol::rewards::{battery_reward, normalize_idleness, patrol_score, step_rewards, RewardParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight from the definitions: mean and max of `1 - exp(-i / c)`.
fn score_oracle(idleness: &[f64], c: f64) -> f64 {
    let f: Vec<f64> = idleness.iter().map(|i| 1.0 - (-i / c).exp()).collect();
    let mean = f.iter().sum::<f64>() / f.len() as f64;
    let max = f.iter().cloned().fold(f64::MIN, f64::max);
    (2.0 - mean - max) / 2.0
}

#[test]
fn difference_reward_matches_counterfactual_world() {
    let params = RewardParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut checked = 0;
    for seed in 0..40 {
        let gen = GenerateParams {
            height: 5,
            width: 5,
            ..GenerateParams::default()
        };
        let map = Arc::new(generate_map(&gen, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap());
        let env = EnvParams {
            init_idleness: patrol::env::InitIdleness::Saturated,
            saturated_idleness_minutes: 150.0,
            ..EnvParams::default()
        };
        let n = 1 + (seed as usize % 4);
        let mut world = WorldState::reset(map.clone(), n, env, seed).unwrap();
        for _ in 0..30 {
            let before = world.idleness().to_vec();
            let msgs = vec![1u8; n];
            let acts: Vec<Action> = world
                .agents()
                .iter()
                .map(|a| {
                    let v: Vec<Action> = ActionMask::for_position(&map, a.location).valid_actions().collect();
                    v[rng.gen_range(0..v.len())]
                })
                .collect();
            let out = world.step(&msgs, &acts).unwrap();
            let c_d = params.difference_scale(4);
            let rewards = step_rewards(&world, &out, &params, c_d);
            let with: Vec<f64> = map.vertices().iter().map(|&v| world.idleness_at(v)).collect();
            for id in 0..n {
                if !out.acted[id] {
                    continue;
                }
                // Undo only agent `id`'s visit: its cell keeps growing.
                let cell = out.landed[id].unwrap();
                let without: Vec<f64> = map
                    .vertices()
                    .iter()
                    .map(|&v| {
                        if v == cell && map.kind(v) == CellKind::Vertex {
                            let i = map.index(v);
                            before[i] + out.duration * (1.0 + map.priority_at(i) as f64)
                        } else {
                            world.idleness_at(v)
                        }
                    })
                    .collect();
                let s = score_oracle(&with, params.c_norm);
                let d = s - score_oracle(&without, params.c_norm);
                let got = rewards[id].unwrap().patrol;
                assert!((got - (s * params.c_rp + d * c_d)).abs() < 1e-12, "{got} vs {}", s * params.c_rp + d * c_d);
                assert!(d >= -1e-15, "visiting never hurts the score");
                checked += 1;
            }
        }
    }
    assert!(checked > 500);
}

#[test]
fn reward_is_sum_of_its_parts() {
    let gen = GenerateParams {
        height: 6,
        width: 6,
        ..GenerateParams::default()
    };
    let map = Arc::new(generate_map(&gen, &mut ChaCha8Rng::seed_from_u64(3)).unwrap());
    let env = EnvParams {
        b_max: 40.0,
        ..EnvParams::default()
    };
    let mut world = WorldState::reset(map.clone(), 4, env, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = RewardParams::default();
    for _ in 0..60 {
        let acts: Vec<Action> = world
            .agents()
            .iter()
            .map(|a| {
                if !a.is_active() {
                    return Action::Stay;
                }
                let v: Vec<Action> = ActionMask::for_position(&map, a.location).valid_actions().collect();
                v[rng.gen_range(0..v.len())]
            })
            .collect();
        let out = world.step(&[2; 4], &acts).unwrap();
        for (id, r) in step_rewards(&world, &out, &params, 12.5).iter().enumerate() {
            let Some(r) = r else { continue };
            assert_eq!(r.total, r.patrol + r.battery + r.collision);
            assert_eq!(r.collision, if out.involved[id] { -1.0 } else { 0.0 });
        }
    }
}

#[test]
fn battery_branches() {
    let p = RewardParams::default();
    let bl = p.b_l;
    assert_eq!(battery_reward(0.0, &p).unwrap(), -50.0);
    let half = battery_reward(bl / 2.0, &p).unwrap();
    assert!((half - (-(20.0 / bl) * (bl / 2.0) + 1.0)).abs() < 1e-12);
    assert!((half + 9.0).abs() < 1e-12);
    assert!((battery_reward(bl, &p).unwrap() + 19.0).abs() < 1e-12);
    assert_eq!(battery_reward(bl + 1e-9, &p).unwrap(), 0.0);
    assert_eq!(battery_reward(1.0, &p).unwrap(), 0.0);
    assert!(battery_reward(1.0 + 1e-9, &p).is_err());
    assert!(battery_reward(-1e-9, &p).is_err());
}

proptest! {
    #[test]
    fn patrol_score_is_bounded(idle in prop::collection::vec(0.0f64..5000.0, 1..40)) {
        let f: Vec<f64> = idle.iter().map(|&i| normalize_idleness(i, 200.0).unwrap()).collect();
        let s = patrol_score(&f);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((s - score_oracle(&idle, 200.0)).abs() < 1e-12);
    }

    #[test]
    fn patrol_score_falls_as_idleness_grows(
        idle in prop::collection::vec(0.0f64..2000.0, 1..30),
        pick in any::<prop::sample::Index>(),
        bump in 1e-3f64..500.0,
    ) {
        let f = |v: &[f64]| patrol_score(&v.iter().map(|&i| normalize_idleness(i, 200.0).unwrap()).collect::<Vec<_>>());
        let mut more = idle.clone();
        more[pick.index(idle.len())] += bump;
        prop_assert!(f(&more) <= f(&idle));
    }

    #[test]
    fn battery_penalty_is_monotone_below_threshold(a in 1e-6f64..0.135, b in 1e-6f64..0.135) {
        let p = RewardParams::default();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(battery_reward(lo, &p).unwrap() >= battery_reward(hi, &p).unwrap());
    }
}

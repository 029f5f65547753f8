use patrol::nn::dist::{entropy, entropy_grad, log_prob_grad};
use patrol::nn::layers::Dense;
use patrol::nn::{masked_softmax, renormalize, ActorNet, ActorTape, ArchConfig, CriticNet, InputShape, NetInput, NnError, PolicyModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_arch(recurrent: usize, separate: bool) -> ArchConfig {
    ArchConfig {
        conv_channels: vec![2],
        hidden: vec![5],
        recurrent,
        separate_trunks: separate,
    }
}

fn shape() -> InputShape {
    InputShape {
        height: 4,
        width: 4,
        max_agents: 2,
    }
}

fn actor_input(rng: &mut ChaCha8Rng, mask: [bool; 5]) -> NetInput {
    NetInput {
        spatial: (0..4 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        extras: (0..6).map(|_| rng.gen_range(0.0..1.0)).collect(),
        mask,
    }
}

fn critic_input(rng: &mut ChaCha8Rng) -> NetInput {
    NetInput {
        spatial: (0..3 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        extras: (0..6).map(|_| rng.gen_range(0.0..1.0)).collect(),
        mask: [true; 5],
    }
}

/// Sum over steps of `log p(move) + 0.7 log p(msg) + 0.3 H(move) + 0.2 H(msg)`.
fn sequence_loss(net: &ActorNet, p: &[f64], inputs: &[NetInput], moves: &[usize], msgs: &[usize]) -> f64 {
    let mut tape = ActorTape::new(net.initial_state());
    let mut loss = 0.0;
    for (t, input) in inputs.iter().enumerate() {
        let out = tape.record(net, p, input).unwrap();
        loss += out.move_probs[moves[t]].ln() + 0.7 * out.message_probs[msgs[t]].ln();
        loss += 0.3 * entropy(&out.move_probs) + 0.2 * entropy(&out.message_probs);
    }
    loss
}

fn analytic(net: &ActorNet, p: &[f64], inputs: &[NetInput], moves: &[usize], msgs: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let mut tape = ActorTape::new(net.initial_state());
    let mut dm = Vec::new();
    let mut dc = Vec::new();
    for (t, input) in inputs.iter().enumerate() {
        let out = tape.record(net, p, input).unwrap();
        let mut g = log_prob_grad(&out.move_probs, moves[t], Some(&input.mask));
        for (a, e) in g.iter_mut().zip(entropy_grad(&out.move_probs)) {
            *a += 0.3 * e;
        }
        let mut h = log_prob_grad(&out.message_probs, msgs[t], None);
        for (a, e) in h.iter_mut().zip(entropy_grad(&out.message_probs)) {
            *a = 0.7 * *a + 0.2 * e;
        }
        dm.push(g);
        dc.push(h);
    }
    let mut grads = vec![0.0; p.len()];
    let d0 = tape.backward(net, p, &dc, &dm, &mut grads).unwrap();
    (grads, d0)
}

fn max_rel_error(analytic: &[f64], f: impl Fn(&[f64]) -> f64, p: &[f64]) -> f64 {
    let eps = 1e-5;
    let mut worst = 0.0f64;
    let mut q = p.to_vec();
    for i in 0..p.len() {
        q[i] = p[i] + eps;
        let up = f(&q);
        q[i] = p[i] - eps;
        let dn = f(&q);
        q[i] = p[i];
        let fd = (up - dn) / (2.0 * eps);
        let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

fn check_actor(recurrent: usize, separate: bool) {
    let net = ActorNet::new(&tiny_arch(recurrent, separate), shape()).unwrap();
    let p = net.layout.init(4);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inputs: Vec<NetInput> = (0..4)
        .map(|k| actor_input(&mut rng, if k % 2 == 0 { [true; 5] } else { [true, false, true, false, true] }))
        .collect();
    let moves = [1, 2, 3, 4];
    let msgs = [0, 15, 7, 3];
    let (g, _) = analytic(&net, &p, &inputs, &moves, &msgs);
    let err = max_rel_error(&g, |q| sequence_loss(&net, q, &inputs, &moves, &msgs), &p);
    assert!(err < 1e-4, "recurrent={recurrent} separate={separate}: {err}");
}

#[test]
fn actor_gradients_feedforward() {
    check_actor(0, false);
}

#[test]
fn actor_gradients_recurrent_shared_trunk() {
    check_actor(3, false);
}

#[test]
fn actor_gradients_recurrent_separate_trunks() {
    check_actor(3, true);
}

#[test]
fn critic_gradients() {
    let net = CriticNet::new(&tiny_arch(0, false), shape()).unwrap();
    let p = net.layout.init(2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = critic_input(&mut rng);
    let target = 0.3;
    let loss = |q: &[f64]| (net.forward_critic(q, &input).unwrap() - target).powi(2);
    let (v, cache) = net.forward_cached(&p, &input).unwrap();
    let mut g = vec![0.0; p.len()];
    net.backward(&p, &cache, 2.0 * (v - target), &mut g);
    assert!(max_rel_error(&g, loss, &p) < 1e-4);
}

#[test]
fn dense_quadratic_matches_closed_form() {
    // L = |Wx + b - y|^2  =>  dL/dW = 2 (Wx + b - y) x^T
    let layer = Dense {
        inp: 3,
        out: 2,
        w: 0,
        b: 6,
    };
    let p = vec![0.5, -1.0, 2.0, 0.1, 0.2, 0.3, 0.05, -0.05];
    let x = [1.0, 2.0, -1.0];
    let y = [0.0, 1.0];
    let out = layer.forward(&p, &x);
    let resid: Vec<f64> = out.iter().zip(&y).map(|(o, t)| 2.0 * (o - t)).collect();
    let mut g = vec![0.0; p.len()];
    layer.backward(&p, &x, &resid, &mut g, None);
    for o in 0..2 {
        for i in 0..3 {
            assert!((g[o * 3 + i] - resid[o] * x[i]).abs() < 1e-12);
        }
        assert!((g[6 + o] - resid[o]).abs() < 1e-12);
    }
}

#[test]
fn zero_loss_gradient_gives_zero_parameter_gradient() {
    let net = ActorNet::new(&tiny_arch(3, false), shape()).unwrap();
    let p = net.layout.init(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tape = ActorTape::new(net.initial_state());
    tape.record(&net, &p, &actor_input(&mut rng, [true; 5])).unwrap();
    let mut g = vec![0.0; p.len()];
    tape.backward(&net, &p, &[vec![0.0; 16]], &[vec![0.0; 5]], &mut g).unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn backward_without_forward() {
    let net = ActorNet::new(&tiny_arch(3, false), shape()).unwrap();
    let p = net.layout.init(1);
    let tape = ActorTape::new(net.initial_state());
    let mut g = vec![0.0; p.len()];
    assert_eq!(tape.backward(&net, &p, &[], &[], &mut g), Err(NnError::NoRecordedForward));
}

#[test]
fn recurrent_unroll_reaches_first_step() {
    let net = ActorNet::new(&tiny_arch(3, false), shape()).unwrap();
    let p = net.layout.init(6);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs: Vec<NetInput> = (0..6).map(|_| actor_input(&mut rng, [true; 5])).collect();
    let mut tape = ActorTape::new(net.initial_state());
    for input in &inputs {
        tape.record(&net, &p, input).unwrap();
    }
    // loss only on the final step's movement head
    let mut dm = vec![Vec::new(); 6];
    dm[5] = vec![1.0, -0.5, 0.0, 0.2, -0.7];
    let dc = vec![Vec::new(); 6];
    let mut g = vec![0.0; p.len()];
    let d0 = tape.backward(&net, &p, &dc, &dm, &mut g).unwrap();
    assert!(d0.iter().any(|&v| v != 0.0));
}

#[test]
fn zero_weights_give_uniform_distributions() {
    let net = ActorNet::new(&tiny_arch(3, false), shape()).unwrap();
    let p = vec![0.0; net.param_count()];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mask = [false, true, true, false, true];
    let out = net.forward_actor(&p, &actor_input(&mut rng, mask), &net.initial_state()).unwrap();
    assert!(out.message_probs.iter().all(|&q| (q - 1.0 / 16.0).abs() < 1e-15));
    for (q, m) in out.move_probs.iter().zip(mask) {
        assert!((q - if m { 1.0 / 3.0 } else { 0.0 }).abs() < 1e-15);
    }
    let critic = CriticNet::new(&tiny_arch(0, false), shape()).unwrap();
    let v = critic.forward_critic(&vec![0.0; critic.param_count()], &critic_input(&mut rng)).unwrap();
    assert_eq!(v, 0.0);
}

#[test]
fn all_masked_is_an_error() {
    let net = ActorNet::new(&tiny_arch(0, false), shape()).unwrap();
    let p = net.layout.init(0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let err = net.forward_actor(&p, &actor_input(&mut rng, [false; 5]), &[]).unwrap_err();
    assert_eq!(err, NnError::AllActionsMasked);
}

#[test]
fn non_finite_input_rejected() {
    let net = ActorNet::new(&tiny_arch(0, false), shape()).unwrap();
    let p = net.layout.init(0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut input = actor_input(&mut rng, [true; 5]);
    input.spatial[3] = f64::NAN;
    assert!(matches!(net.forward_actor(&p, &input, &[]), Err(NnError::NonFiniteActivation(_))));
}

#[test]
fn init_is_deterministic_and_seed_dependent() {
    let arch = tiny_arch(3, false);
    let a = PolicyModel::new(&arch, shape(), 10).unwrap();
    let b = PolicyModel::new(&arch, shape(), 10).unwrap();
    let c = PolicyModel::new(&arch, shape(), 11).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.actor_params, c.actor_params);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let input = critic_input(&mut rng);
    let va = a.critic.forward_critic(&a.critic_params, &input).unwrap();
    let vb = b.critic.forward_critic(&b.critic_params, &input).unwrap();
    assert_eq!(va.to_bits(), vb.to_bits());
}

#[test]
fn dense_init_variance_is_inverse_fan_in() {
    let arch = ArchConfig {
        conv_channels: vec![1],
        hidden: vec![400],
        recurrent: 0,
        separate_trunks: false,
    };
    let net = ActorNet::new(&arch, InputShape { height: 18, width: 18, max_agents: 1 }).unwrap();
    let p = net.layout.init(77);
    let t = net.layout.tensors.iter().find(|t| t.name == "trunk.dense0.weight").unwrap();
    let fan_in = t.shape[1];
    let w = &p[t.offset..t.offset + t.len()];
    assert!(w.len() >= 100_000);
    let var = w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64;
    let expect = 1.0 / fan_in as f64;
    assert!((var / expect - 1.0).abs() < 0.05, "{var} vs {expect}");
}

#[test]
fn dense_input_widths_follow_map_size() {
    let arch = ArchConfig::default();
    let s = InputShape {
        height: 12,
        width: 12,
        max_agents: 5,
    };
    assert_eq!(ActorNet::new(&arch, s).unwrap().dense_input_width(), 8 * 8 * 8 + 6);
    assert_eq!(CriticNet::new(&arch, s).unwrap().dense_input_width(), 527);
}

proptest! {
    #[test]
    fn masked_softmax_sums_to_one(logits in prop::array::uniform5(-30.0f64..30.0), bits in 1u8..32) {
        let mask: Vec<bool> = (0..5).map(|i| bits & (1 << i) != 0).collect();
        let p = masked_softmax(&logits, &mask).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (q, m) in p.iter().zip(&mask) {
            if !m {
                prop_assert_eq!(*q, 0.0);
            }
        }
    }

    #[test]
    fn renormalize_sums_to_one(raw in prop::array::uniform5(0.01f64..1.0), bits in 1u8..32) {
        let mask: Vec<bool> = (0..5).map(|i| bits & (1 << i) != 0).collect();
        let p = renormalize(&raw, &mask).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (q, m) in p.iter().zip(&mask) {
            if !m {
                prop_assert_eq!(*q, 0.0);
            }
        }
    }
}

//! Actor and critic networks built from the layer kernels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dist::{masked_softmax, softmax};
use super::layers::{check_finite, Conv2d, Dense, Gru, GruCache, KERNEL};
use super::NnError;
use crate::env::MAX_MESSAGE;
use crate::map::Action;
use crate::observe::{ObservationView, ACTOR_CHANNELS, CRITIC_CHANNELS, MESSAGES};

/// Layer widths shared by the actor and critic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// Output channels of the 3x3 convolutions.
    pub conv_channels: Vec<usize>,
    /// Dense widths after the convolutions.
    pub hidden: Vec<usize>,
    /// Width of the recurrent cell in front of the actor heads; 0 disables it.
    pub recurrent: usize,
    /// Give the message and movement heads their own trunks.
    pub separate_trunks: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            conv_channels: vec![4, 8],
            hidden: vec![512, 341, 227],
            recurrent: 227,
            separate_trunks: false,
        }
    }
}

impl ArchConfig {
    /// Upper bound on any single layer width.
    pub const MAX_WIDTH: usize = 1 << 14;

    pub fn validate(&self, shape: &InputShape) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidArch(m.to_string()));
        if self.conv_channels.len() > 8 || self.hidden.len() > 16 {
            return bad("too many layers");
        }
        let widths = self.conv_channels.iter().chain(&self.hidden);
        if widths.clone().any(|&w| w == 0 || w > Self::MAX_WIDTH) || self.recurrent > Self::MAX_WIDTH {
            return bad("layer widths must lie in 1..=16384");
        }
        if shape.height > 1024 || shape.width > 1024 || shape.max_agents == 0 || shape.max_agents > 1024 {
            return bad("input shape out of range");
        }
        Ok(())
    }
}

/// Map dimensions and critic capacity the networks are sized for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
    pub max_agents: usize,
}

/// Name, shape and offset of one parameter tensor in the flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    #[serde(skip)]
    pub fan_in: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
}

impl ParamLayout {
    fn alloc(&mut self, name: String, shape: Vec<usize>, fan_in: usize) -> usize {
        let offset = self.total;
        self.total += shape.iter().product::<usize>();
        self.tensors.push(TensorInfo {
            name,
            shape,
            offset,
            fan_in,
        });
        offset
    }

    fn dense(&mut self, name: &str, inp: usize, out: usize) -> Dense {
        let w = self.alloc(format!("{name}.weight"), vec![out, inp], inp);
        let b = self.alloc(format!("{name}.bias"), vec![out], 0);
        Dense { inp, out, w, b }
    }

    /// Scaled-uniform fan-in initialization: weights `U(-a, a)` with
    /// `a = sqrt(3 / fan_in)` (variance `1 / fan_in`), biases zero.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; self.total];
        for t in &self.tensors {
            if t.fan_in == 0 {
                continue;
            }
            let a = (3.0 / t.fan_in as f64).sqrt();
            for v in &mut p[t.offset..t.offset + t.len()] {
                *v = rng.gen_range(-a..a);
            }
        }
        p
    }
}

/// Network input: channel-major matrices plus side inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct NetInput {
    pub spatial: Vec<f64>,
    pub extras: Vec<f64>,
    pub mask: [bool; Action::COUNT],
}

impl NetInput {
    pub fn from_view(view: &ObservationView) -> Self {
        Self {
            spatial: view.spatial(),
            extras: view.extras(),
            mask: view.action_mask.map_or([true; Action::COUNT], |m| m.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrunkCache {
    /// Input of every convolution, then the flattened dense input, then the
    /// output of every dense layer (post-activation).
    conv_in: Vec<Vec<f64>>,
    dense_in: Vec<Vec<f64>>,
    dense_out: Vec<f64>,
    gru: Option<GruCache>,
    pub feat: Vec<f64>,
}

/// Convolutions, dense stack and an optional recurrent cell, all tanh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trunk {
    convs: Vec<Conv2d>,
    denses: Vec<Dense>,
    gru: Option<Gru>,
    extras: usize,
    conv_flat: usize,
}

impl Trunk {
    fn build(
        layout: &mut ParamLayout,
        prefix: &str,
        channels: usize,
        shape: &InputShape,
        extras: usize,
        arch: &ArchConfig,
        recurrent: usize,
    ) -> Result<Self, NnError> {
        let shrink = arch.conv_channels.len() * (KERNEL - 1);
        if shape.height <= shrink || shape.width <= shrink {
            return Err(NnError::MapTooSmall {
                height: shape.height,
                width: shape.width,
                convs: arch.conv_channels.len(),
            });
        }
        let (mut c, mut h, mut w) = (channels, shape.height, shape.width);
        let mut convs = Vec::new();
        for (k, &oc) in arch.conv_channels.iter().enumerate() {
            let fan = c * KERNEL * KERNEL;
            let wo = layout.alloc(format!("{prefix}.conv{k}.weight"), vec![oc, c, KERNEL, KERNEL], fan);
            let bo = layout.alloc(format!("{prefix}.conv{k}.bias"), vec![oc], 0);
            convs.push(Conv2d {
                in_c: c,
                out_c: oc,
                in_h: h,
                in_w: w,
                w: wo,
                b: bo,
            });
            c = oc;
            h -= KERNEL - 1;
            w -= KERNEL - 1;
        }
        let conv_flat = c * h * w;
        let mut width = conv_flat + extras;
        let mut denses = Vec::new();
        for (k, &out) in arch.hidden.iter().enumerate() {
            denses.push(layout.dense(&format!("{prefix}.dense{k}"), width, out));
            width = out;
        }
        let gru = (recurrent > 0).then(|| {
            let hd = recurrent;
            let w_ih = layout.alloc(format!("{prefix}.gru.weight_ih"), vec![3 * hd, width], width);
            let w_hh = layout.alloc(format!("{prefix}.gru.weight_hh"), vec![3 * hd, hd], hd);
            let b_ih = layout.alloc(format!("{prefix}.gru.bias_ih"), vec![3 * hd], 0);
            let b_hh = layout.alloc(format!("{prefix}.gru.bias_hh"), vec![3 * hd], 0);
            Gru {
                inp: width,
                hidden: hd,
                w_ih,
                w_hh,
                b_ih,
                b_hh,
            }
        });
        Ok(Self {
            convs,
            denses,
            gru,
            extras,
            conv_flat,
        })
    }

    pub fn feat_width(&self) -> usize {
        match &self.gru {
            Some(g) => g.hidden,
            None => self.denses.last().map_or(self.conv_flat + self.extras, |d| d.out),
        }
    }

    pub fn state_width(&self) -> usize {
        self.gru.as_ref().map_or(0, |g| g.hidden)
    }

    /// Dense input width (flattened convolution output plus side inputs).
    pub fn dense_input_width(&self) -> usize {
        self.conv_flat + self.extras
    }

    fn forward(&self, p: &[f64], spatial: &[f64], extras: &[f64], h: &[f64]) -> Result<(Vec<f64>, TrunkCache), NnError> {
        let mut conv_in = Vec::with_capacity(self.convs.len());
        let mut x = spatial.to_vec();
        for (k, conv) in self.convs.iter().enumerate() {
            let mut y = conv.forward(p, &x);
            y.iter_mut().for_each(|v| *v = v.tanh());
            check_finite(&y, &format!("conv{k}"))?;
            conv_in.push(std::mem::replace(&mut x, y));
        }
        x.extend_from_slice(extras);
        let mut dense_in = Vec::with_capacity(self.denses.len());
        for (k, dense) in self.denses.iter().enumerate() {
            let mut y = dense.forward(p, &x);
            y.iter_mut().for_each(|v| *v = v.tanh());
            check_finite(&y, &format!("dense{k}"))?;
            dense_in.push(std::mem::replace(&mut x, y));
        }
        let (feat, gru) = match &self.gru {
            Some(g) => {
                let (out, cache) = g.forward(p, &x, h);
                check_finite(&out, "gru")?;
                (out, Some(cache))
            }
            None => (x.clone(), None),
        };
        let cache = TrunkCache {
            conv_in,
            dense_in,
            dense_out: x,
            gru,
            feat: feat.clone(),
        };
        Ok((feat, cache))
    }

    /// Accumulates parameter gradients; returns the gradient of the incoming
    /// recurrent state.
    fn backward(&self, p: &[f64], cache: &TrunkCache, d_feat: &[f64], d_state_out: Option<&[f64]>, grads: &mut [f64]) -> Vec<f64> {
        let (mut d, d_state_in) = match (&self.gru, &cache.gru) {
            (Some(g), Some(gc)) => {
                let mut dh = d_feat.to_vec();
                if let Some(ds) = d_state_out {
                    dh.iter_mut().zip(ds).for_each(|(a, b)| *a += b);
                }
                g.backward(p, gc, &dh, grads)
            }
            _ => (d_feat.to_vec(), Vec::new()),
        };
        let mut y = &cache.dense_out;
        for (k, dense) in self.denses.iter().enumerate().rev() {
            for (dv, yv) in d.iter_mut().zip(y) {
                *dv *= 1.0 - yv * yv;
            }
            let x = &cache.dense_in[k];
            let mut dx = vec![0.0; x.len()];
            let need_dx = k > 0 || !self.convs.is_empty();
            dense.backward(p, x, &d, grads, need_dx.then_some(&mut dx[..]));
            d = dx;
            y = x;
        }
        if self.convs.is_empty() {
            return d_state_in;
        }
        d.truncate(self.conv_flat);
        let mut y: &[f64] = &y[..self.conv_flat];
        for (k, conv) in self.convs.iter().enumerate().rev() {
            for (dv, yv) in d.iter_mut().zip(y) {
                *dv *= 1.0 - yv * yv;
            }
            let x = &cache.conv_in[k];
            if k > 0 {
                let mut dx = vec![0.0; x.len()];
                conv.backward(p, x, &d, grads, Some(&mut dx));
                d = dx;
            } else {
                conv.backward(p, x, &d, grads, None);
            }
            y = x;
        }
        d_state_in
    }
}

/// Distributions and next recurrent state from one actor step.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorOutput {
    /// Probability of messages `1..=16`, index 0 is message 1.
    pub message_probs: Vec<f64>,
    /// Masked movement distribution in action order.
    pub move_probs: Vec<f64>,
    pub new_state: Vec<f64>,
}

/// Message head and masked movement head over one shared trunk, or over two
/// separate trunks. The message pass sees the observation with the message
/// channel cleared; the movement pass sees everyone's messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorNet {
    pub shape: InputShape,
    trunks: Vec<Trunk>,
    msg_head: Dense,
    move_head: Dense,
    pub layout: ParamLayout,
}

impl ActorNet {
    pub const EXTRAS: usize = 1 + Action::COUNT;

    pub fn new(arch: &ArchConfig, shape: InputShape) -> Result<Self, NnError> {
        arch.validate(&shape)?;
        let mut layout = ParamLayout::default();
        let names: &[&str] = if arch.separate_trunks { &["comm", "act"] } else { &["trunk"] };
        let mut trunks = Vec::new();
        for name in names {
            trunks.push(Trunk::build(&mut layout, name, ACTOR_CHANNELS, &shape, Self::EXTRAS, arch, arch.recurrent)?);
        }
        let feat = trunks[0].feat_width();
        let msg_head = layout.dense("msg_head", feat, MAX_MESSAGE as usize);
        let move_head = layout.dense("move_head", feat, Action::COUNT);
        Ok(Self {
            shape,
            trunks,
            msg_head,
            move_head,
            layout,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn state_width(&self) -> usize {
        self.trunks.iter().map(Trunk::state_width).sum()
    }

    pub fn dense_input_width(&self) -> usize {
        self.trunks[0].dense_input_width()
    }

    pub fn initial_state(&self) -> Vec<f64> {
        vec![0.0; self.state_width()]
    }

    /// Offsets `[start, end)` of the message head's parameters.
    pub fn message_head_range(&self) -> std::ops::Range<usize> {
        self.msg_head.w..self.msg_head.b + self.msg_head.out
    }

    fn check_input(&self, input: &NetInput, state: &[f64]) -> Result<(), NnError> {
        let cells = self.shape.height * self.shape.width;
        let expect = [ACTOR_CHANNELS * cells, Self::EXTRAS, self.state_width()];
        let got = [input.spatial.len(), input.extras.len(), state.len()];
        if expect != got {
            return Err(NnError::ShapeMismatch {
                expected: expect.to_vec(),
                got: got.to_vec(),
            });
        }
        check_finite(&input.spatial, "input")?;
        check_finite(&input.extras, "input")
    }

    fn comm_input(&self, spatial: &[f64]) -> Vec<f64> {
        let cells = self.shape.height * self.shape.width;
        let mut s = spatial.to_vec();
        s[MESSAGES * cells..(MESSAGES + 1) * cells].iter_mut().for_each(|v| *v = 0.0);
        s
    }

    fn state_slice<'a>(&self, state: &'a [f64], trunk: usize) -> &'a [f64] {
        let w = self.trunks[0].state_width();
        &state[trunk * w..(trunk + 1) * w]
    }

    fn comm_forward(&self, p: &[f64], input: &NetInput, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>, TrunkCache), NnError> {
        let spatial = self.comm_input(&input.spatial);
        let (feat, cache) = self.trunks[0].forward(p, &spatial, &input.extras, self.state_slice(state, 0))?;
        let logits = self.msg_head.forward(p, &feat);
        check_finite(&logits, "msg_head")?;
        Ok((softmax(&logits), feat, cache))
    }

    fn act_forward(&self, p: &[f64], input: &NetInput, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>, TrunkCache), NnError> {
        let t = self.trunks.len() - 1;
        let (feat, cache) = self.trunks[t].forward(p, &input.spatial, &input.extras, self.state_slice(state, t))?;
        let logits = self.move_head.forward(p, &feat);
        check_finite(&logits, "move_head")?;
        Ok((masked_softmax(&logits, &input.mask)?, feat, cache))
    }

    /// Message distribution; any message channel content is ignored.
    pub fn message_distribution(&self, p: &[f64], input: &NetInput, state: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(input, state)?;
        Ok(self.comm_forward(p, input, state)?.0)
    }

    /// Both heads for an observation whose message channel holds this
    /// step's messages.
    pub fn forward_actor(&self, p: &[f64], input: &NetInput, state: &[f64]) -> Result<ActorOutput, NnError> {
        Ok(self.step_cached(p, input, state)?.0)
    }

    fn step_cached(&self, p: &[f64], input: &NetInput, state: &[f64]) -> Result<(ActorOutput, ActorStepCache), NnError> {
        self.check_input(input, state)?;
        let (message_probs, comm_feat, comm) = self.comm_forward(p, input, state)?;
        let (move_probs, act_feat, act) = self.act_forward(p, input, state)?;
        let new_state = if self.state_width() == 0 {
            Vec::new()
        } else if self.trunks.len() == 2 {
            [comm_feat, act_feat.clone()].concat()
        } else {
            act_feat.clone()
        };
        let out = ActorOutput {
            message_probs,
            move_probs,
            new_state,
        };
        Ok((out, ActorStepCache { comm, act }))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ActorStepCache {
    comm: TrunkCache,
    act: TrunkCache,
}

/// Recorded actor steps for backpropagation through time. The recurrent
/// state is carried from step to step starting at the given initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorTape {
    state: Vec<f64>,
    steps: Vec<ActorStepCache>,
}

impl ActorTape {
    pub fn new(initial_state: Vec<f64>) -> Self {
        Self {
            state: initial_state,
            steps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    /// Overrides the carried state, e.g. to zero it after a redeployment.
    /// Gradients do not flow across a reset.
    pub fn reset_state(&mut self, state: Vec<f64>) {
        self.state = state;
    }

    pub fn record(&mut self, net: &ActorNet, p: &[f64], input: &NetInput) -> Result<ActorOutput, NnError> {
        let (out, cache) = net.step_cached(p, input, &self.state)?;
        self.state = out.new_state.clone();
        self.steps.push(cache);
        Ok(out)
    }

    /// Backpropagates per-step logit gradients of both heads through every
    /// recorded step. `d_msg_logits[t]` / `d_move_logits[t]` may be empty
    /// for steps without loss terms. Returns the gradient of the initial
    /// state.
    pub fn backward(
        &self,
        net: &ActorNet,
        p: &[f64],
        d_msg_logits: &[Vec<f64>],
        d_move_logits: &[Vec<f64>],
        grads: &mut [f64],
    ) -> Result<Vec<f64>, NnError> {
        if self.steps.is_empty() {
            return Err(NnError::NoRecordedForward);
        }
        if d_msg_logits.len() != self.steps.len() || d_move_logits.len() != self.steps.len() || grads.len() != p.len() {
            return Err(NnError::ShapeMismatch {
                expected: vec![self.steps.len(), self.steps.len(), p.len()],
                got: vec![d_msg_logits.len(), d_move_logits.len(), grads.len()],
            });
        }
        let sw = net.trunks[0].state_width();
        let separate = net.trunks.len() == 2;
        let mut d_state = vec![0.0; net.state_width()];
        for t in (0..self.steps.len()).rev() {
            let cache = &self.steps[t];
            let zeros_move = vec![0.0; Action::COUNT];
            let zeros_msg = vec![0.0; MAX_MESSAGE as usize];
            let dm = if d_move_logits[t].is_empty() { &zeros_move } else { &d_move_logits[t] };
            let dc = if d_msg_logits[t].is_empty() { &zeros_msg } else { &d_msg_logits[t] };

            let mut d_feat_act = vec![0.0; net.move_head.inp];
            net.move_head.backward(p, &cache.act.feat, dm, grads, Some(&mut d_feat_act));
            let act_slice = if separate { &d_state[sw..] } else { &d_state[..] };
            let act_out = (sw > 0).then_some(act_slice);
            let d_in_act = net.trunks[net.trunks.len() - 1].backward(p, &cache.act, &d_feat_act, act_out, grads);

            let mut d_feat_comm = vec![0.0; net.msg_head.inp];
            net.msg_head.backward(p, &cache.comm.feat, dc, grads, Some(&mut d_feat_comm));
            let comm_out = (separate && sw > 0).then(|| &d_state[..sw]);
            let d_in_comm = net.trunks[0].backward(p, &cache.comm, &d_feat_comm, comm_out, grads);

            d_state = if sw == 0 {
                Vec::new()
            } else if separate {
                [d_in_comm, d_in_act].concat()
            } else {
                d_in_act.iter().zip(&d_in_comm).map(|(a, b)| a + b).collect()
            };
        }
        Ok(d_state)
    }
}

/// Feed-forward value network over the global state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticNet {
    pub shape: InputShape,
    trunk: Trunk,
    value_head: Dense,
    pub layout: ParamLayout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticCache {
    trunk: TrunkCache,
}

impl CriticNet {
    pub fn new(arch: &ArchConfig, shape: InputShape) -> Result<Self, NnError> {
        arch.validate(&shape)?;
        let mut layout = ParamLayout::default();
        let extras = 3 * shape.max_agents;
        let trunk = Trunk::build(&mut layout, "critic", CRITIC_CHANNELS, &shape, extras, arch, 0)?;
        let value_head = layout.dense("value_head", trunk.feat_width(), 1);
        Ok(Self {
            shape,
            trunk,
            value_head,
            layout,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn dense_input_width(&self) -> usize {
        self.trunk.dense_input_width()
    }

    fn check_input(&self, input: &NetInput) -> Result<(), NnError> {
        let cells = self.shape.height * self.shape.width;
        let expect = [CRITIC_CHANNELS * cells, 3 * self.shape.max_agents];
        let got = [input.spatial.len(), input.extras.len()];
        if expect != got {
            return Err(NnError::ShapeMismatch {
                expected: expect.to_vec(),
                got: got.to_vec(),
            });
        }
        check_finite(&input.spatial, "input")?;
        check_finite(&input.extras, "input")
    }

    pub fn forward_critic(&self, p: &[f64], input: &NetInput) -> Result<f64, NnError> {
        Ok(self.forward_cached(p, input)?.0)
    }

    pub fn forward_cached(&self, p: &[f64], input: &NetInput) -> Result<(f64, CriticCache), NnError> {
        self.check_input(input)?;
        let (feat, trunk) = self.trunk.forward(p, &input.spatial, &input.extras, &[])?;
        let v = self.value_head.forward(p, &feat)[0];
        if !v.is_finite() {
            return Err(NnError::NonFiniteActivation("value_head".into()));
        }
        Ok((v, CriticCache { trunk }))
    }

    pub fn backward(&self, p: &[f64], cache: &CriticCache, d_value: f64, grads: &mut [f64]) {
        let mut d_feat = vec![0.0; self.value_head.inp];
        self.value_head.backward(p, &cache.trunk.feat, &[d_value], grads, Some(&mut d_feat));
        self.trunk.backward(p, &cache.trunk, &d_feat, None, grads);
    }
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::MappoError;
use crate::baselines::{Controller, JointCommand, StrategyError};
use crate::env::{EventKind, StepOutcome, WorldState};
use crate::map::Action;
use crate::nn::dist::{argmax, sample};
use crate::nn::{NetInput, NnError, PolicyModel};
use crate::observe::{encode_actor_view, EncodingParams};

/// A trained actor driving every agent, with one recurrent state each.
#[derive(Debug, Clone)]
pub struct RlController {
    model: PolicyModel,
    encoding: EncodingParams,
    states: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
    /// Take the most likely message and move instead of sampling.
    greedy: bool,
}

impl RlController {
    pub fn new(model: PolicyModel, world: &WorldState, encoding: EncodingParams, seed: u64, greedy: bool) -> Result<Self, MappoError> {
        let (h, w) = (world.map().height(), world.map().width());
        if (h, w) != (model.shape.height, model.shape.width) {
            return Err(NnError::ShapeMismatch {
                expected: vec![model.shape.height, model.shape.width],
                got: vec![h, w],
            }
            .into());
        }
        let states = vec![model.actor.initial_state(); world.agents().len()];
        Ok(Self {
            model,
            encoding,
            states,
            rng: ChaCha8Rng::seed_from_u64(seed),
            greedy,
        })
    }

    fn pick(&mut self, probs: &[f64]) -> usize {
        if self.greedy {
            argmax(probs)
        } else {
            sample(probs, &mut self.rng)
        }
    }

    fn decide_inner(&mut self, world: &WorldState) -> Result<JointCommand, MappoError> {
        let n = world.agents().len();
        let mut cmd = JointCommand::idle(n);
        let active: Vec<usize> = world.active_agents().map(|a| a.id).collect();
        for &id in &active {
            let view = encode_actor_view(world, id, None, &self.encoding)?;
            let probs = self.model.actor.message_distribution(&self.model.actor_params, &NetInput::from_view(&view), &self.states[id])?;
            let k = self.pick(&probs);
            cmd.messages[id] = k as u8 + 1;
        }
        for &id in &active {
            let view = encode_actor_view(world, id, Some(&cmd.messages), &self.encoding)?;
            let out = self.model.actor.forward_actor(&self.model.actor_params, &NetInput::from_view(&view), &self.states[id])?;
            let k = self.pick(&out.move_probs);
            cmd.actions[id] = Action::from_index(k).expect("five actions");
            self.states[id] = out.new_state;
        }
        Ok(cmd)
    }
}

impl Controller for RlController {
    fn name(&self) -> &str {
        "rl"
    }

    fn decide(&mut self, world: &WorldState) -> Result<JointCommand, StrategyError> {
        self.decide_inner(world).map_err(|e| StrategyError::Policy(e.to_string()))
    }

    fn observe(&mut self, _world: &WorldState, outcome: &StepOutcome) {
        for e in &outcome.events {
            if e.kind == EventKind::Redeployed {
                self.states[e.agent] = self.model.actor.initial_state();
            }
        }
    }
}

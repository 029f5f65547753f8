//! Action masks and matrix-encoded observations for the actor and critic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{WorldState, MAX_MESSAGE};
use crate::map::{Action, CellKind, GridMap, Pos};
use crate::rewards::normalize_idleness;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObserveError {
    #[error("unknown or inactive agent {0}")]
    UnknownAgent(usize),
    #[error("{active} active agents exceed the critic capacity of {max}")]
    TooManyAgents { active: usize, max: usize },
    #[error("agent {agent} has message {message}, expected 1..=16")]
    MessageOutOfRange { agent: usize, message: u8 },
}

/// Validity of `<Up, Down, Left, Right, Stay>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionMask(pub [bool; 5]);

impl ActionMask {
    pub const NONE: ActionMask = ActionMask([false; 5]);
    pub const ALL: ActionMask = ActionMask([true; 5]);

    /// Moves that stay in bounds and avoid obstacles; Stay is always valid.
    /// Cells held by other agents are not masked.
    pub fn for_position(map: &GridMap, pos: Pos) -> Self {
        let mut mask = [false; 5];
        for action in Action::ALL {
            mask[action.index()] = map.target(pos, action).is_some();
        }
        ActionMask(mask)
    }

    pub fn allows(&self, action: Action) -> bool {
        self.0[action.index()]
    }

    pub fn valid_actions(&self) -> impl Iterator<Item = Action> + '_ {
        Action::ALL.into_iter().filter(|a| self.allows(*a))
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn as_f64(&self) -> [f64; 5] {
        self.0.map(|b| if b { 1.0 } else { 0.0 })
    }
}

/// Mask of `agent`'s currently valid actions.
pub fn valid_actions(world: &WorldState, agent: usize) -> Result<ActionMask, ObserveError> {
    match world.agent(agent) {
        Some(a) if a.is_active() => Ok(ActionMask::for_position(world.map(), a.location)),
        _ => Err(ObserveError::UnknownAgent(agent)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingParams {
    /// Value marking charging stations in the structure channel. Must exceed
    /// the own-location indicator plus the largest message.
    pub station_indicator: f64,
    /// Idleness normalization constant, minutes.
    pub c_norm: f64,
}

impl Default for EncodingParams {
    fn default() -> Self {
        Self {
            station_indicator: 100.0,
            c_norm: 200.0,
        }
    }
}

pub const STRUCTURE: usize = 0;
pub const IDLENESS: usize = 1;
pub const LOCATIONS: usize = 2;
pub const MESSAGES: usize = 3;

pub const ACTOR_CHANNELS: usize = 4;
pub const CRITIC_CHANNELS: usize = 3;

/// Matrix channels plus the non-spatial side inputs. Actor views carry a
/// battery scalar and an action mask; critic views carry the padded battery
/// vector and location list.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationView {
    pub height: usize,
    pub width: usize,
    /// Row-major matrices, one per channel.
    pub channels: Vec<Vec<f64>>,
    pub battery_scalar: Option<f64>,
    pub battery_vector: Option<Vec<f64>>,
    pub location_list: Option<Vec<Pos>>,
    pub action_mask: Option<ActionMask>,
}

impl ObservationView {
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    /// All channels concatenated, channel-major.
    pub fn spatial(&self) -> Vec<f64> {
        self.channels.concat()
    }

    /// Side inputs appended after the convolution stack.
    pub fn extras(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let Some(b) = self.battery_scalar {
            out.push(b);
        }
        if let Some(mask) = self.action_mask {
            out.extend(mask.as_f64());
        }
        if let Some(bv) = &self.battery_vector {
            out.extend(bv);
        }
        if let Some(locs) = &self.location_list {
            let hr = (self.height.max(2) - 1) as f64;
            let wr = (self.width.max(2) - 1) as f64;
            for p in locs {
                out.push(p.row as f64 / hr);
                out.push(p.col as f64 / wr);
            }
        }
        out
    }
}

fn structure_channel(map: &GridMap, params: &EncodingParams) -> Vec<f64> {
    (0..map.len())
        .map(|i| match map.kind_at(i) {
            CellKind::Vertex => 0.0,
            CellKind::Obstacle => -1.0,
            CellKind::Station => params.station_indicator,
        })
        .collect()
}

fn idleness_channel(world: &WorldState, params: &EncodingParams) -> Vec<f64> {
    let map = world.map();
    world
        .idleness()
        .iter()
        .enumerate()
        .map(|(i, &idle)| match map.kind_at(i) {
            CellKind::Vertex => normalize_idleness(idle, params.c_norm).unwrap_or(0.0),
            _ => 0.0,
        })
        .collect()
}

/// Actor observation of `agent`. `messages` holds this step's message of
/// every agent, indexed by id; pass `None` before messages are chosen, which
/// leaves the message channel empty.
pub fn encode_actor_view(
    world: &WorldState,
    agent: usize,
    messages: Option<&[u8]>,
    params: &EncodingParams,
) -> Result<ObservationView, ObserveError> {
    let me = match world.agent(agent) {
        Some(a) if a.is_active() => a,
        _ => return Err(ObserveError::UnknownAgent(agent)),
    };
    let map = world.map();
    let cells = map.len();
    let mut locations = vec![0.0; cells];
    let mut message_channel = vec![0.0; cells];
    for other in world.active_agents() {
        let i = map.index(other.location);
        let own = other.id == me.id;
        locations[i] = if own { 1.0 } else { -2.0 };
        if let Some(msgs) = messages {
            let m = msgs.get(other.id).copied().unwrap_or(0);
            if !(1..=MAX_MESSAGE).contains(&m) {
                return Err(ObserveError::MessageOutOfRange {
                    agent: other.id,
                    message: m,
                });
            }
            message_channel[i] = if own { m as f64 } else { -(m as f64) };
        }
    }
    Ok(ObservationView {
        height: map.height(),
        width: map.width(),
        channels: vec![
            structure_channel(map, params),
            idleness_channel(world, params),
            locations,
            message_channel,
        ],
        battery_scalar: Some(world.battery_fraction(agent)),
        battery_vector: None,
        location_list: None,
        action_mask: Some(ActionMask::for_position(map, me.location)),
    })
}

/// Global critic observation sized for up to `max_agents` agents. Vacant
/// battery slots read 1 and vacant location slots hold the first station.
pub fn encode_critic_view(
    world: &WorldState,
    max_agents: usize,
    params: &EncodingParams,
) -> Result<ObservationView, ObserveError> {
    let map = world.map();
    let active: Vec<_> = world.active_agents().collect();
    if active.len() > max_agents {
        return Err(ObserveError::TooManyAgents {
            active: active.len(),
            max: max_agents,
        });
    }
    let mut locations = vec![0.0; map.len()];
    let mut batteries = vec![1.0; max_agents];
    let mut location_list = vec![map.stations()[0]; max_agents];
    for (slot, a) in active.iter().enumerate() {
        locations[map.index(a.location)] = 1.0;
        batteries[slot] = world.battery_fraction(a.id);
        location_list[slot] = a.location;
    }
    Ok(ObservationView {
        height: map.height(),
        width: map.width(),
        channels: vec![
            structure_channel(map, params),
            idleness_channel(world, params),
            locations,
        ],
        battery_scalar: None,
        battery_vector: Some(batteries),
        location_list: Some(location_list),
        action_mask: None,
    })
}

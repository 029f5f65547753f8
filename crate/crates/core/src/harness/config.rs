use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::baselines::{BaselineKind, BaselineParams};
use crate::env::EnvParams;
use crate::map::{parse_map, GridMap};
use crate::mappo::TrainConfig;
use crate::observe::EncodingParams;
use crate::rewards::RewardParams;

/// Run configuration. Every field has a default, so `{}` is a valid file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub env: EnvConfig,
    pub rewards: RewardParams,
    pub strategy: StrategyConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Map file; relative paths are resolved against the config file.
    pub map: Option<PathBuf>,
    pub agents: usize,
    pub params: EnvParams,
    pub encoding: EncodingParams,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            map: None,
            agents: 2,
            params: EnvParams::default(),
            encoding: EncodingParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    #[default]
    Cr,
    Part,
    Sebs,
    Rl,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Cr => "cr",
            StrategyKind::Part => "part",
            StrategyKind::Sebs => "sebs",
            StrategyKind::Rl => "rl",
        }
    }

    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            StrategyKind::Cr => Some(BaselineKind::Cr),
            StrategyKind::Part => Some(BaselineKind::Part),
            StrategyKind::Sebs => Some(BaselineKind::Sebs),
            StrategyKind::Rl => None,
        }
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cr" => Ok(StrategyKind::Cr),
            "part" => Ok(StrategyKind::Part),
            "sebs" => Ok(StrategyKind::Sebs),
            "rl" => Ok(StrategyKind::Rl),
            _ => Err(format!("unknown strategy {s:?}; expected cr, part, sebs or rl")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Trained weights for `rl`.
    pub checkpoint: Option<PathBuf>,
    /// `rl` takes the most likely message and move instead of sampling.
    pub greedy: bool,
    pub baseline: BaselineParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Count only episodes without a battery failure, drawing extra
    /// episodes (up to `max_attempts`) until `episodes` succeed.
    pub require_success: bool,
    pub max_attempts: usize,
    /// Steps excluded from the idleness averages.
    pub burnin: usize,
    /// Split episodes into this many equal groups and report the spread of
    /// group means instead of per-episode spread.
    pub repeats: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            horizon: 14_400,
            seed: 0,
            require_success: false,
            max_attempts: 1000,
            burnin: 0,
            repeats: 1,
        }
    }
}

impl Config {
    /// Parses a config document; `base` is the directory relative map and
    /// checkpoint paths are resolved against.
    pub fn from_json(text: &str, base: Option<&Path>) -> Result<Self, HarnessError> {
        let mut cfg: Config = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(base) = base {
            let resolve = |p: &mut Option<PathBuf>| {
                if let Some(path) = p.as_mut() {
                    if path.is_relative() {
                        *path = base.join(&*path);
                    }
                }
            };
            resolve(&mut cfg.env.map);
            resolve(&mut cfg.strategy.checkpoint);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, path.parent())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if let Err(e) = self.env.params.validate() {
            return bad(e.to_string());
        }
        if let Err(e) = self.rewards.validate() {
            return bad(e.to_string());
        }
        if let Err(e) = self.train.validate() {
            return bad(e.to_string());
        }
        if self.env.agents == 0 {
            return bad("env.agents must be >= 1".into());
        }
        if self.env.encoding.c_norm != self.rewards.c_norm {
            return bad("env.encoding.c_norm must equal rewards.c_norm".into());
        }
        if !(self.env.encoding.station_indicator > 1.0 + crate::env::MAX_MESSAGE as f64) {
            return bad("station_indicator must exceed 1 + the largest message".into());
        }
        if self.eval.repeats == 0 {
            return bad("eval.repeats must be >= 1".into());
        }
        Ok(())
    }

    /// Loads the configured map (or `override_path`).
    pub fn load_map(&self, override_path: Option<&Path>) -> Result<Arc<GridMap>, HarnessError> {
        let path = override_path
            .or(self.env.map.as_deref())
            .ok_or_else(|| HarnessError::Config("no map given (env.map or --map)".into()))?;
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Ok(Arc::new(parse_map(&text)?))
    }
}

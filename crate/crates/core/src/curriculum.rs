//! Staged training plans: single-agent pretraining, horizon fine-tuning and
//! two multi-agent branches forked from the horizon-invariant base stage.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, RewardMode};
use crate::error::{Error, Result};
use crate::ppo::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Paper,
    Desk,
}

/// Where a stage's parameters come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    Fresh,
    Previous,
    /// Final checkpoint of an earlier named stage.
    Stage(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvOverrides {
    pub n_agents: Option<usize>,
    pub n_targets: Option<usize>,
    pub horizon: Option<u32>,
    pub target_speed_frac: Option<f64>,
    pub target_speed_frac_max: Option<f64>,
    pub reward_mode: Option<RewardMode>,
}

impl EnvOverrides {
    pub fn apply(&self, base: &EnvConfig) -> EnvConfig {
        let mut c = base.clone();
        if let Some(v) = self.n_agents {
            c.n_agents = v;
        }
        if let Some(v) = self.n_targets {
            c.n_targets = v;
        }
        if let Some(v) = self.horizon {
            c.horizon = v;
        }
        if let Some(v) = self.target_speed_frac {
            c.target_speed_frac = v;
            c.target_speed_frac_max = None;
        }
        if self.target_speed_frac_max.is_some() {
            c.target_speed_frac_max = self.target_speed_frac_max;
        }
        if let Some(v) = self.reward_mode {
            c.reward_mode = v;
        }
        c
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub total_timesteps: Option<u64>,
    pub lr: Option<f64>,
}

impl TrainOverrides {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        if let Some(v) = self.total_timesteps {
            c.total_timesteps = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub name: String,
    /// Branch label; stages of different branches never share outputs.
    #[serde(default)]
    pub branch: Option<String>,
    #[serde(default)]
    pub env: EnvOverrides,
    #[serde(default)]
    pub train: TrainOverrides,
    pub init: Init,
    #[serde(default)]
    pub reset_critic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    pub name: String,
    pub stages: Vec<Stage>,
}

impl StagePlan {
    pub fn validate(&self) -> Result<()> {
        let first = self.stages.first().ok_or_else(|| Error::config("stages", "plan has no stages"))?;
        if first.init != Init::Fresh {
            return Err(Error::config("stages[0].init", "first stage must start fresh"));
        }
        let mut seen = BTreeSet::new();
        for (i, s) in self.stages.iter().enumerate() {
            if s.name.is_empty() {
                return Err(Error::Config { field: format!("stages[{i}].name"), reason: "must not be empty".to_string() });
            }
            if let Init::Stage(src) = &s.init {
                if !seen.contains(src.as_str()) {
                    return Err(Error::Config {
                        field: format!("stages[{i}].init"),
                        reason: format!("stage '{src}' is not an earlier stage"),
                    });
                }
            }
            if !seen.insert(s.name.as_str()) {
                return Err(Error::Config { field: format!("stages[{i}].name"), reason: format!("duplicate stage name '{}'", s.name) });
            }
        }
        Ok(())
    }

    /// Index of the stage whose checkpoint initializes stage `i`.
    pub fn source_of(&self, i: usize) -> Option<usize> {
        match &self.stages[i].init {
            Init::Fresh => None,
            Init::Previous => i.checked_sub(1),
            Init::Stage(name) => self.stages[..i].iter().position(|s| &s.name == name),
        }
    }
}

pub const FULL_PRETRAIN_STEPS: u64 = 10_000_000_000;
pub const FULL_HORIZON_STEPS: u64 = 100_000_000;
pub const FULL_BRANCH_STEPS: u64 = 2_000_000_000;

/// Built-in plans. The `paper` scale carries full training budgets; the desk
/// plan keeps its structure with budgets a thousand times smaller (floored
/// at 10⁶ steps per stage).
pub fn default_plan(scale: Scale) -> StagePlan {
    let budget = |full: u64| match scale {
        Scale::Paper => full,
        Scale::Desk => (full / 1000).max(1_000_000),
    };
    let mut stages = Vec::new();
    stages.push(Stage {
        name: "pretrain".into(),
        branch: None,
        env: EnvOverrides {
            n_agents: Some(1),
            n_targets: Some(1),
            horizon: Some(128),
            target_speed_frac: Some(0.6),
            reward_mode: Some(RewardMode::Tracking),
            ..Default::default()
        },
        train: TrainOverrides { total_timesteps: Some(budget(FULL_PRETRAIN_STEPS)), lr: None },
        init: Init::Fresh,
        reset_critic: false,
    });
    for h in [256u32, 512, 1024] {
        stages.push(Stage {
            name: format!("horizon_{h}"),
            branch: None,
            env: EnvOverrides { horizon: Some(h), ..stages[0].env.clone() },
            train: TrainOverrides { total_timesteps: Some(budget(FULL_HORIZON_STEPS)), lr: None },
            init: Init::Previous,
            reset_critic: false,
        });
    }
    let base = String::from("horizon_1024");
    for n in 2..=5usize {
        stages.push(Stage {
            name: format!("follow_{n}v{n}"),
            branch: Some("follow".into()),
            env: EnvOverrides {
                n_agents: Some(n),
                n_targets: Some(n),
                horizon: Some(256),
                target_speed_frac: Some(0.3),
                target_speed_frac_max: Some(0.5),
                reward_mode: Some(RewardMode::Follow),
            },
            train: TrainOverrides { total_timesteps: Some(budget(FULL_BRANCH_STEPS / 4)), lr: None },
            init: if n == 2 { Init::Stage(base.clone()) } else { Init::Previous },
            reset_critic: n == 2,
        });
    }
    for n in 2..=3usize {
        stages.push(Stage {
            name: format!("tracking_{n}v1"),
            branch: Some("tracking".into()),
            env: EnvOverrides {
                n_agents: Some(n),
                n_targets: Some(1),
                horizon: Some(256),
                target_speed_frac: Some(0.8),
                reward_mode: Some(RewardMode::Tracking),
                ..Default::default()
            },
            train: TrainOverrides { total_timesteps: Some(budget(FULL_BRANCH_STEPS / 2)), lr: None },
            init: if n == 2 { Init::Stage(base.clone()) } else { Init::Previous },
            reset_critic: n == 2,
        });
    }
    let name = match scale {
        Scale::Paper => "paper",
        Scale::Desk => "desk",
    };
    StagePlan { name: name.into(), stages }
}

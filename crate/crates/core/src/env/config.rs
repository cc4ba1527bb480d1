use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::HeadingDeltaModel;
use crate::tracking::PfConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    Tracking,
    Follow,
}

/// Divisors applied to observation and state features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObsScale {
    pub position: f64,
    pub speed: f64,
    pub age: f64,
    pub spread: f64,
}

impl Default for ObsScale {
    fn default() -> Self {
        ObsScale { position: 1000.0, speed: 1.0, age: 10.0, spread: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub n_agents: usize,
    pub n_targets: usize,
    pub horizon: u32,
    /// Step duration in seconds.
    pub dt: f64,
    pub agent_speed: f64,
    pub target_speed_frac: f64,
    /// When set, each episode draws the target speed fraction uniformly
    /// from `[target_speed_frac, target_speed_frac_max]`.
    pub target_speed_frac_max: Option<f64>,
    /// Mean number of steps between target direction changes.
    pub target_turn_interval: f64,
    pub detection_range: f64,
    pub comm_range: f64,
    pub comm_drop_prob: f64,
    pub range_noise_std: f64,
    pub eps_min: f64,
    pub eps_max: f64,
    pub d_min: f64,
    pub d_safe: f64,
    pub reward_mode: RewardMode,
    pub spawn_min_sep: f64,
    pub spawn_max_sep: f64,
    pub target_depth_min: f64,
    pub target_depth_max: f64,
    /// Extra agent heading noise (rad) standing in for currents.
    pub perturbation_std: f64,
    /// Consecutive undetected steps after which a target counts as lost.
    pub lost_after: u32,
    pub pf: PfConfig,
    pub scale: ObsScale,
    pub heading_model: HeadingDeltaModel,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            n_agents: 1,
            n_targets: 1,
            horizon: 128,
            dt: 30.0,
            agent_speed: 1.0,
            target_speed_frac: 0.3,
            target_speed_frac_max: None,
            target_turn_interval: 60.0,
            detection_range: 450.0,
            comm_range: 1500.0,
            comm_drop_prob: 0.1,
            range_noise_std: 3.0,
            eps_min: 10.0,
            eps_max: 50.0,
            d_min: 50.0,
            d_safe: 10.0,
            reward_mode: RewardMode::Tracking,
            spawn_min_sep: 50.0,
            spawn_max_sep: 200.0,
            target_depth_min: 10.0,
            target_depth_max: 60.0,
            perturbation_std: 0.0,
            lost_after: 20,
            pf: PfConfig::default(),
            scale: ObsScale::default(),
            heading_model: HeadingDeltaModel::default_fitted(),
        }
    }
}

impl EnvConfig {
    pub fn n_entities(&self) -> usize {
        self.n_agents + self.n_targets
    }

    pub fn max_target_speed(&self) -> f64 {
        self.agent_speed * self.target_speed_frac_max.unwrap_or(self.target_speed_frac).max(self.target_speed_frac)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, reason: &str| if ok { Ok(()) } else { Err(Error::config(field, reason)) };
        check(self.n_agents >= 1, "n_agents", "must be >= 1")?;
        check(self.n_targets >= 1, "n_targets", "must be >= 1")?;
        check(self.horizon >= 1, "horizon", "must be >= 1")?;
        check(self.dt > 0.0, "dt", "must be > 0")?;
        check(self.agent_speed >= 0.0, "agent_speed", "must be >= 0")?;
        check(self.target_speed_frac >= 0.0, "target_speed_frac", "must be >= 0")?;
        if let Some(hi) = self.target_speed_frac_max {
            check(hi >= self.target_speed_frac, "target_speed_frac_max", "must be >= target_speed_frac")?;
        }
        check(self.target_turn_interval >= 1.0, "target_turn_interval", "must be >= 1 step")?;
        check(self.detection_range > 0.0, "detection_range", "must be > 0")?;
        check(self.comm_range >= 0.0, "comm_range", "must be >= 0")?;
        check((0.0..=1.0).contains(&self.comm_drop_prob), "comm_drop_prob", "must lie in [0, 1]")?;
        check(self.range_noise_std > 0.0, "range_noise_std", "must be > 0")?;
        check(self.eps_min < self.eps_max, "eps_min", "must be < eps_max")?;
        check(self.d_min >= 0.0, "d_min", "must be >= 0")?;
        check(self.d_safe >= 0.0, "d_safe", "must be >= 0")?;
        check(self.spawn_min_sep < self.spawn_max_sep, "spawn_min_sep", "must be < spawn_max_sep")?;
        check(self.target_depth_min <= self.target_depth_max, "target_depth_min", "must be <= target_depth_max")?;
        check(self.target_depth_min >= 0.0, "target_depth_min", "must be >= 0")?;
        check(self.perturbation_std >= 0.0, "perturbation_std", "must be >= 0")?;
        check(self.lost_after >= 1, "lost_after", "must be >= 1")?;
        check(self.pf.n_particles >= 1, "pf.n_particles", "must be >= 1")?;
        check(self.pf.process_noise_pos >= 0.0, "pf.process_noise_pos", "must be >= 0")?;
        check(self.pf.process_noise_vel >= 0.0, "pf.process_noise_vel", "must be >= 0")?;
        check(self.pf.max_speed_factor > 0.0, "pf.max_speed_factor", "must be > 0")?;
        check(
            self.scale.position > 0.0 && self.scale.speed > 0.0 && self.scale.age > 0.0 && self.scale.spread > 0.0,
            "scale",
            "all divisors must be > 0",
        )?;
        self.heading_model.validate()?;
        // every runtime lookup must hit a bucket
        self.heading_model.bucket(self.agent_speed, self.dt)?;
        Ok(())
    }
}

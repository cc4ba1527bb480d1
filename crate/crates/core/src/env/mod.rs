//! The multi-agent underwater tracking task.
//!
//! A step runs six phases in a fixed order: targets move, agents move, agents
//! take range measurements, each agent's particle filters predict and absorb
//! their own measurements, agents exchange positions and measurements over
//! the acoustic link, and finally reward, info and observations are built.
//! Phase functions operate on a [`WorldMut`] so the batched engine can run
//! each phase across all environments before moving to the next.

mod config;
pub mod obs;
mod world;

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub use config::{EnvConfig, ObsScale, RewardMode};
pub use obs::{best_track_error, write_global_state, write_observation, write_observations, TOKEN_FEATURES};
pub use world::{Contact, Dims, EnvClock, Track, TargetState, WorldMut, WorldState};

use crate::error::{Error, Result};
use crate::kinematics::{advance, heading_delta, VehicleState, RUDDER_MAX, RUDDER_STEPS};
use crate::math::{hypot2, hypot3, wrap_angle};
use crate::rng::stream_rng;
use crate::tokens::TokenView;
use crate::tracking::{
    fill_ring, pf_estimate, pf_predict, pf_resample_if_needed, pf_update, slant_to_horizontal, RangeMeasurement,
};

pub const N_ACTIONS: usize = RUDDER_STEPS;
pub const SPAWN_ATTEMPTS: usize = 1000;
const SPAWN_DRAWS_PER_ENTITY: usize = 64;

/// Rudder angle for a discrete setting: evenly spaced over [-0.24, 0.24].
pub fn rudder_angle(index: u8) -> Result<f64> {
    if (index as usize) >= RUDDER_STEPS {
        return Err(Error::Contract(alloc::format!("rudder index {index} outside 0..{RUDDER_STEPS}")));
    }
    Ok(-RUDDER_MAX + index as f64 * (2.0 * RUDDER_MAX / (RUDDER_STEPS - 1) as f64))
}

/// Legal next rudder settings: the current one and its two neighbours.
pub fn valid_actions(rudder_index: u8) -> Result<[bool; N_ACTIONS]> {
    let i = rudder_index as usize;
    if i >= N_ACTIONS {
        return Err(Error::Contract(alloc::format!("rudder index {rudder_index} outside 0..{N_ACTIONS}")));
    }
    let mut mask = [false; N_ACTIONS];
    for (j, m) in mask.iter_mut().enumerate() {
        *m = j + 1 >= i && j <= i + 1;
    }
    Ok(mask)
}

/// Per-target tracking reward: 1 below `eps_min`, exponential decay
/// `exp(-2t / (1 - t))` in between, 0 above `eps_max`. Non-finite errors
/// (no track) score 0.
pub fn tracking_reward_single(error: f64, eps_min: f64, eps_max: f64) -> f64 {
    if !error.is_finite() || error > eps_max {
        return 0.0;
    }
    if error < eps_min {
        return 1.0;
    }
    let t = (error - eps_min) / (eps_max - eps_min);
    Float::exp(-2.0 * t / (1.0 - t))
}

pub fn tracking_reward(errors: &[f64], cfg: &EnvConfig) -> f64 {
    errors.iter().map(|&e| tracking_reward_single(e, cfg.eps_min, cfg.eps_max)).sum::<f64>() / errors.len() as f64
}

/// Fraction of targets with some agent within `d_min` (inclusive).
pub fn follow_reward(min_dists: &[f64], cfg: &EnvConfig) -> f64 {
    min_dists.iter().filter(|&&d| d <= cfg.d_min).count() as f64 / min_dists.len() as f64
}

/// True when any two agents are strictly closer than `d_safe` in 3D.
pub fn crash_check(agents: &[VehicleState], d_safe: f64) -> bool {
    for i in 0..agents.len() {
        for j in i + 1..agents.len() {
            let (a, b) = (&agents[i].position, &agents[j].position);
            if hypot3(a[0] - b[0], a[1] - b[1], a[2] - b[2]) < d_safe {
                return true;
            }
        }
    }
    false
}

/// Geometric number of steps (support 1, 2, ...) with the given mean.
/// An infinite mean never triggers a change.
pub fn sample_turn_countdown<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u32 {
    if !mean.is_finite() {
        return u32::MAX;
    }
    if mean <= 1.0 {
        return 1;
    }
    let p = 1.0 / mean;
    let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    let k = Float::floor(Float::ln(u) / Float::ln(1.0 - p)) + 1.0;
    if k >= u32::MAX as f64 {
        u32::MAX
    } else {
        k as u32
    }
}

/// Erratic target steering. Returns the commanded heading and the countdown
/// after this step; a fresh uniform heading is drawn when the countdown is 0.
pub fn target_policy<R: Rng + ?Sized>(target: &TargetState, cfg: &EnvConfig, rng: &mut R) -> (f64, u32) {
    if target.countdown == u32::MAX {
        return (target.cmd_heading, u32::MAX);
    }
    let (cmd, countdown) = if target.countdown == 0 {
        (uniform_heading(rng), sample_turn_countdown(cfg.target_turn_interval, rng))
    } else {
        (target.cmd_heading, target.countdown)
    };
    (cmd, if countdown == u32::MAX { u32::MAX } else { countdown - 1 })
}

/// Largest heading change an agent can make in one step.
pub fn max_turn_per_step(cfg: &EnvConfig) -> Result<f64> {
    Ok(Float::abs(heading_delta(&cfg.heading_model, RUDDER_MAX, cfg.agent_speed, cfg.dt)?))
}

fn uniform_heading<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    wrap_angle(rng.random_range(-PI..PI))
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Output of one environment step, owned.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub n_agents: usize,
    pub n_entities: usize,
    /// `n_agents` blocks of `n_entities x TOKEN_FEATURES`.
    pub obs: Vec<f32>,
    pub global_state: Vec<f32>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
    /// Rudder setting of every agent after the step (drives action masks).
    pub rudder: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    /// Best per-target tracking error in metres, NaN while untracked.
    pub track_err: Vec<f64>,
    /// Per-target horizontal distance to the closest agent.
    pub min_dist: Vec<f64>,
    pub collision: bool,
    pub lost: Vec<bool>,
}

impl StepOutput {
    pub fn new(dims: Dims) -> Self {
        let e = dims.entities();
        StepOutput {
            n_agents: dims.agents,
            n_entities: e,
            obs: vec![0.0; dims.agents * e * TOKEN_FEATURES],
            global_state: vec![0.0; e * TOKEN_FEATURES],
            reward: 0.0,
            done: false,
            info: StepInfo {
                track_err: vec![f64::NAN; dims.targets],
                min_dist: vec![0.0; dims.targets],
                collision: false,
                lost: vec![false; dims.targets],
            },
            rudder: vec![2; dims.agents],
        }
    }

    pub fn obs_tokens(&self, agent: usize) -> TokenView<'_> {
        let block = self.n_entities * TOKEN_FEATURES;
        TokenView::new(self.n_entities, TOKEN_FEATURES, &self.obs[agent * block..(agent + 1) * block])
    }

    pub fn global_tokens(&self) -> TokenView<'_> {
        TokenView::new(self.n_entities, TOKEN_FEATURES, &self.global_state)
    }

    pub fn action_mask(&self, agent: usize) -> [bool; N_ACTIONS] {
        valid_actions(self.rudder[agent]).expect("rudder index kept in range")
    }

    pub fn view_mut(&mut self) -> OutputMut<'_> {
        OutputMut {
            obs: &mut self.obs,
            global: &mut self.global_state,
            reward: &mut self.reward,
            done: &mut self.done,
            track_err: &mut self.info.track_err,
            min_dist: &mut self.info.min_dist,
            collision: &mut self.info.collision,
            lost: &mut self.info.lost,
            rudder: &mut self.rudder,
        }
    }
}

/// Borrowed output buffers for one environment.
pub struct OutputMut<'a> {
    pub obs: &'a mut [f32],
    pub global: &'a mut [f32],
    pub reward: &'a mut f64,
    pub done: &'a mut bool,
    pub track_err: &'a mut [f64],
    pub min_dist: &'a mut [f64],
    pub collision: &'a mut bool,
    pub lost: &'a mut [bool],
    pub rudder: &'a mut [u8],
}

/// Places a fresh episode into `w` and runs the initial sensing pass
/// (measure, filter initialisation, communication) so the first observation
/// already carries tracking information.
pub fn spawn_into(w: &mut WorldMut<'_>, cfg: &EnvConfig, seed: u64) -> Result<()> {
    *w.rng = stream_rng(seed);
    w.clock.step = 0;
    w.clock.seed = seed;
    w.scratch.fill(0.0);
    let rng = &mut *w.rng;
    let frac = match cfg.target_speed_frac_max {
        Some(hi) if hi > cfg.target_speed_frac => rng.random_range(cfg.target_speed_frac..=hi),
        _ => cfg.target_speed_frac,
    };
    w.clock.target_speed_frac = frac;

    let n = w.dims.entities();
    let radius = 0.5 * cfg.spawn_max_sep;
    let mut placed: Vec<[f64; 2]> = Vec::with_capacity(n);
    let mut ok = false;
    'attempt: for _ in 0..SPAWN_ATTEMPTS {
        placed.clear();
        for _ in 0..n {
            let mut found = None;
            for _ in 0..SPAWN_DRAWS_PER_ENTITY {
                let r = radius * Float::sqrt(rng.random::<f64>());
                let a = rng.random_range(-PI..PI);
                let p = [r * Float::cos(a), r * Float::sin(a)];
                let fits = placed.iter().all(|q| {
                    let d = hypot2(p[0] - q[0], p[1] - q[1]);
                    d >= cfg.spawn_min_sep && d <= cfg.spawn_max_sep
                });
                if fits {
                    found = Some(p);
                    break;
                }
            }
            match found {
                Some(p) => placed.push(p),
                None => continue 'attempt,
            }
        }
        ok = true;
        break;
    }
    if !ok {
        return Err(Error::Spawn {
            attempts: SPAWN_ATTEMPTS,
            n_agents: w.dims.agents,
            n_targets: w.dims.targets,
            min_sep: cfg.spawn_min_sep,
            max_sep: cfg.spawn_max_sep,
        });
    }

    for (a, v) in w.agents.iter_mut().enumerate() {
        let heading = uniform_heading(rng);
        *v = VehicleState { position: [placed[a][0], placed[a][1], 0.0], heading, speed: cfg.agent_speed, rudder_index: 2 };
    }
    let na = w.dims.agents;
    for (t, ts) in w.targets.iter_mut().enumerate() {
        let depth = if cfg.target_depth_max > cfg.target_depth_min {
            rng.random_range(cfg.target_depth_min..cfg.target_depth_max)
        } else {
            cfg.target_depth_min
        };
        let heading = uniform_heading(rng);
        let p = placed[na + t];
        *ts = TargetState {
            vehicle: VehicleState {
                position: [p[0], p[1], depth],
                heading,
                speed: frac * cfg.agent_speed,
                rudder_index: 2,
            },
            cmd_heading: heading,
            countdown: sample_turn_countdown(cfg.target_turn_interval, rng),
            miss_streak: 0,
        };
    }
    w.contacts.iter_mut().for_each(|c| *c = Contact::default());
    w.tracks.iter_mut().for_each(|t| *t = Track::default());
    w.meas.iter_mut().for_each(|m| *m = None);
    for buf in [&mut *w.px, &mut *w.py, &mut *w.vx, &mut *w.vy, &mut *w.w] {
        buf.iter_mut().for_each(|x| *x = 0.0);
    }

    phase_measure(w, cfg);
    phase_filter(w, cfg, false);
    phase_comms(w, cfg);
    Ok(())
}

/// Allocates and spawns a single environment.
pub fn spawn(cfg: &EnvConfig, seed: u64) -> Result<WorldState> {
    cfg.validate()?;
    let mut state = WorldState::allocate(Dims::of(cfg));
    spawn_into(&mut state.view_mut(), cfg, seed)?;
    Ok(state)
}

/// Observation/state buffers for a freshly spawned (or any) state.
pub fn observe(state: &mut WorldState, cfg: &EnvConfig) -> StepOutput {
    let mut out = StepOutput::new(state.dims());
    let w = state.view_mut();
    write_observations(&w, cfg, &mut out.obs);
    write_global_state(&w, cfg, &mut out.global_state);
    for (r, a) in out.rudder.iter_mut().zip(w.agents.iter()) {
        *r = a.rudder_index;
    }
    out
}

/// Rejects actions that break the rudder mask.
pub fn check_actions(agents: &[VehicleState], actions: &[u8]) -> Result<()> {
    if actions.len() != agents.len() {
        return Err(Error::Contract(alloc::format!("{} actions for {} agents", actions.len(), agents.len())));
    }
    for (i, (a, &u)) in agents.iter().zip(actions).enumerate() {
        let mask = valid_actions(a.rudder_index)?;
        if (u as usize) >= N_ACTIONS || !mask[u as usize] {
            return Err(Error::Contract(alloc::format!(
                "agent {i}: action {u} not allowed from rudder index {}",
                a.rudder_index
            )));
        }
    }
    Ok(())
}

/// Phase 1: targets steer toward their commanded heading at the agents'
/// maximum turn rate.
pub fn phase_targets(w: &mut WorldMut<'_>, cfg: &EnvConfig) {
    let max_turn = max_turn_per_step(cfg).expect("validated config has the agent bucket");
    let noise_std = cfg.heading_model.noise_std;
    for t in w.targets.iter_mut() {
        let (cmd, countdown) = target_policy(t, cfg, &mut *w.rng);
        t.cmd_heading = cmd;
        t.countdown = countdown;
        let delta = wrap_angle(cmd - t.vehicle.heading).clamp(-max_turn, max_turn);
        let noise = noise_std * normal(&mut *w.rng);
        t.vehicle = advance(&t.vehicle, delta, cfg.dt, noise);
    }
}

/// Phase 2: agents apply their rudder actions. Actions must already be
/// checked with [`check_actions`].
pub fn phase_agents(w: &mut WorldMut<'_>, cfg: &EnvConfig, actions: &[u8]) {
    let noise_std = cfg.heading_model.noise_std;
    for (v, &u) in w.agents.iter_mut().zip(actions) {
        let gamma = rudder_angle(u).expect("checked action");
        let delta = heading_delta(&cfg.heading_model, gamma, v.speed, cfg.dt).expect("validated bucket");
        let noise = noise_std * normal(&mut *w.rng) + cfg.perturbation_std * normal(&mut *w.rng);
        v.rudder_index = u;
        *v = advance(v, delta, cfg.dt, noise);
    }
}

/// Phase 3: noisy range measurements for every agent-target pair within
/// detection range, subject to acoustic dropouts.
pub fn phase_measure(w: &mut WorldMut<'_>, cfg: &EnvConfig) {
    let nt = w.dims.targets;
    for t in 0..nt {
        let tv = w.targets[t].vehicle;
        let mut seen = false;
        for a in 0..w.dims.agents {
            let av = &w.agents[a];
            let dist = hypot3(
                tv.position[0] - av.position[0],
                tv.position[1] - av.position[1],
                tv.position[2] - av.position[2],
            );
            let mut m = None;
            if dist <= cfg.detection_range && w.rng.random::<f64>() >= cfg.comm_drop_prob {
                let r3 = Float::max(dist + cfg.range_noise_std * normal(&mut *w.rng), 0.0);
                let (r2, _) = slant_to_horizontal(r3, tv.position[2] - av.position[2]);
                m = Some(RangeMeasurement {
                    origin_xy: av.xy(),
                    range_2d: r2,
                    noise_std: cfg.range_noise_std,
                    step_index: w.clock.step,
                });
                seen = true;
            }
            w.meas[a * nt + t] = m;
        }
        let ts = &mut w.targets[t];
        ts.miss_streak = if seen { 0 } else { ts.miss_streak.saturating_add(1) };
    }
}

fn particle_speed_cap(cfg: &EnvConfig) -> f64 {
    cfg.max_target_speed() * cfg.pf.max_speed_factor
}

/// Absorbs one measurement into an agent's filter, initialising it on the
/// measurement ring when empty or when the update degenerates.
fn fuse(w: &mut WorldMut<'_>, cfg: &EnvConfig, agent: usize, target: usize, m: &RangeMeasurement) {
    let k = agent * w.dims.targets + target;
    let initialized = w.tracks[k].initialized;
    let cap = particle_speed_cap(cfg);
    let (mut p, scratch, rng) = w.filter(agent, target);
    if !initialized {
        fill_ring(p, m, cap, rng);
    } else if pf_update(p.reborrow(), core::slice::from_ref(m)) {
        fill_ring(p, m, cap, rng);
    } else {
        pf_resample_if_needed(p, scratch, rng);
    }
    let tr = &mut w.tracks[k];
    tr.initialized = true;
    tr.estimate.age = 0;
}

/// Phase 4: every initialised filter predicts one step; own measurements
/// are absorbed. `predict` is false during the spawn sensing pass.
pub fn phase_filter(w: &mut WorldMut<'_>, cfg: &EnvConfig, predict: bool) {
    let cap = particle_speed_cap(cfg);
    for a in 0..w.dims.agents {
        for t in 0..w.dims.targets {
            let k = a * w.dims.targets + t;
            let initialized = w.tracks[k].initialized;
            if initialized && predict {
                let (p, _, rng) = w.filter(a, t);
                pf_predict(p, cfg.dt, cfg.pf.process_noise_pos, cfg.pf.process_noise_vel, cap, rng);
            }
            if let Some(m) = w.meas[k] {
                fuse(w, cfg, a, t, &m);
            } else if initialized {
                let tr = &mut w.tracks[k];
                tr.estimate.age = tr.estimate.age.saturating_add(1);
            }
        }
    }
}

/// Phase 5: each ordered agent pair within communication range exchanges
/// (with dropout) the sender's pose and this step's range measurements;
/// the receiver fuses them into its own filters. Ends by refreshing every
/// track estimate.
pub fn phase_comms(w: &mut WorldMut<'_>, cfg: &EnvConfig) {
    let na = w.dims.agents;
    let nt = w.dims.targets;
    for r in 0..na {
        for s in 0..na {
            if r == s {
                continue;
            }
            let (pr, ps) = (w.agents[r].position, w.agents[s].position);
            let d = hypot3(pr[0] - ps[0], pr[1] - ps[1], pr[2] - ps[2]);
            let received = d <= cfg.comm_range && w.rng.random::<f64>() >= cfg.comm_drop_prob;
            if received {
                let sv = w.agents[s];
                w.contacts[r * na + s] =
                    Contact { position: sv.position, heading: sv.heading, speed: sv.speed, age: 0, valid: true };
                for t in 0..nt {
                    if let Some(m) = w.meas[s * nt + t] {
                        fuse(w, cfg, r, t, &m);
                    }
                }
            } else {
                let c = &mut w.contacts[r * na + s];
                c.age = c.age.saturating_add(1);
            }
        }
    }
    for a in 0..na {
        for t in 0..nt {
            let k = a * nt + t;
            if w.tracks[k].initialized {
                let age = w.tracks[k].estimate.age;
                let mut est = pf_estimate(w.filter_ref(a, t));
                est.age = age;
                w.tracks[k].estimate = est;
            }
        }
    }
}

/// Phase 6: advances the step counter and fills reward, info, observations
/// and global state.
pub fn phase_outputs(w: &mut WorldMut<'_>, cfg: &EnvConfig, out: &mut OutputMut<'_>) {
    w.clock.step += 1;
    let nt = w.dims.targets;
    for t in 0..nt {
        let tp = w.targets[t].vehicle.position;
        out.min_dist[t] = w
            .agents
            .iter()
            .map(|a| hypot2(a.position[0] - tp[0], a.position[1] - tp[1]))
            .fold(f64::INFINITY, f64::min);
        out.track_err[t] = best_track_error(w, t).unwrap_or(f64::NAN);
        out.lost[t] = w.targets[t].miss_streak >= cfg.lost_after;
    }
    let collision = crash_check(w.agents, cfg.d_safe);
    *out.collision = collision;
    *out.reward = if collision {
        -1.0
    } else {
        match cfg.reward_mode {
            RewardMode::Tracking => tracking_reward(out.track_err, cfg),
            RewardMode::Follow => follow_reward(out.min_dist, cfg),
        }
    };
    *out.done = w.clock.step >= cfg.horizon;
    for (r, a) in out.rudder.iter_mut().zip(w.agents.iter()) {
        *r = a.rudder_index;
    }
    write_observations(w, cfg, out.obs);
    write_global_state(w, cfg, out.global);
}

/// Runs all phases on one environment view.
pub fn step_view(w: &mut WorldMut<'_>, cfg: &EnvConfig, actions: &[u8], out: &mut OutputMut<'_>) -> Result<()> {
    check_actions(w.agents, actions)?;
    phase_targets(w, cfg);
    phase_agents(w, cfg, actions);
    phase_measure(w, cfg);
    phase_filter(w, cfg, true);
    phase_comms(w, cfg);
    phase_outputs(w, cfg, out);
    Ok(())
}

/// Steps a single environment in place. The state is untouched on error.
pub fn step(state: &mut WorldState, actions: &[u8], cfg: &EnvConfig) -> Result<StepOutput> {
    let mut out = StepOutput::new(state.dims());
    step_view(&mut state.view_mut(), cfg, actions, &mut out.view_mut())?;
    Ok(out)
}

/// Targets flagged lost: undetected by every agent for `lost_after`
/// consecutive steps.
pub fn lost_target_check(state: &WorldState, cfg: &EnvConfig) -> Vec<bool> {
    state.targets.iter().map(|t| t.miss_streak >= cfg.lost_after).collect()
}

#[cfg(test)]
mod tests;

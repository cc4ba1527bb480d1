//! Structure-of-arrays storage for many environments and the phase-major
//! batched step.
//!
//! Every field of [`WorldState`] is stored once for the whole batch with the
//! environment index as the leading dimension, e.g. particles are laid out
//! `[env][agent][target][particle]`. [`BatchState::slots`] cuts the arrays
//! into per-environment views without allocating per environment, and
//! [`vstep`] runs each phase over all views before the next phase starts.
//! How the per-view work is scheduled is up to an [`Executor`]; the result
//! never depends on it because each environment owns its random stream.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::env::{
    self, check_actions, phase_agents, phase_comms, phase_filter, phase_measure, phase_outputs, phase_targets,
    spawn_into, Contact, Dims, EnvClock, EnvConfig, OutputMut, TargetState, Track, WorldMut, WorldState,
    TOKEN_FEATURES,
};
use crate::error::{Error, Result};
use crate::kinematics::VehicleState;
use crate::rng::{derive_seed, stream_rng, StreamRng};
use crate::tracking::RangeMeasurement;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Targets,
    Agents,
    Measure,
    Filter,
    Comms,
    Outputs,
    Reset,
}

impl Phase {
    pub const ALL: [Phase; 7] =
        [Phase::Targets, Phase::Agents, Phase::Measure, Phase::Filter, Phase::Comms, Phase::Outputs, Phase::Reset];

    pub fn name(&self) -> &'static str {
        match self {
            Phase::Targets => "targets",
            Phase::Agents => "agents",
            Phase::Measure => "measure",
            Phase::Filter => "filter",
            Phase::Comms => "comms",
            Phase::Outputs => "outputs",
            Phase::Reset => "reset",
        }
    }
}

/// Seed of episode `episode` in environment slot `env`.
pub fn episode_seed(master_seed: u64, env: usize, episode: u64) -> u64 {
    derive_seed(master_seed, env as u64, episode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchState {
    pub n_envs: usize,
    pub master_seed: u64,
    pub n_agents: usize,
    pub n_targets: usize,
    pub n_particles: usize,
    pub agents: Vec<VehicleState>,
    pub targets: Vec<TargetState>,
    pub contacts: Vec<Contact>,
    pub tracks: Vec<Track>,
    pub meas: Vec<Option<RangeMeasurement>>,
    pub px: Vec<f64>,
    pub py: Vec<f64>,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
    pub w: Vec<f64>,
    pub scratch: Vec<f64>,
    pub clocks: Vec<EnvClock>,
    pub rngs: Vec<StreamRng>,
}

/// Batched step outputs, environment-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOutput {
    pub n_envs: usize,
    pub n_agents: usize,
    pub n_targets: usize,
    pub obs: Vec<f32>,
    pub global: Vec<f32>,
    pub reward: Vec<f64>,
    pub done: Vec<bool>,
    pub track_err: Vec<f64>,
    pub min_dist: Vec<f64>,
    pub collision: Vec<bool>,
    pub lost: Vec<bool>,
    pub rudder: Vec<u8>,
    /// Last observation of an episode that was auto-reset during this step.
    pub final_obs: Vec<f32>,
    pub final_global: Vec<f32>,
}

impl BatchOutput {
    pub fn new(n_envs: usize, dims: Dims) -> Self {
        let e = dims.entities();
        let obs = n_envs * dims.agents * e * TOKEN_FEATURES;
        let glob = n_envs * e * TOKEN_FEATURES;
        BatchOutput {
            n_envs,
            n_agents: dims.agents,
            n_targets: dims.targets,
            obs: vec![0.0; obs],
            global: vec![0.0; glob],
            reward: vec![0.0; n_envs],
            done: vec![false; n_envs],
            track_err: vec![f64::NAN; n_envs * dims.targets],
            min_dist: vec![0.0; n_envs * dims.targets],
            collision: vec![false; n_envs],
            lost: vec![false; n_envs * dims.targets],
            rudder: vec![2; n_envs * dims.agents],
            final_obs: vec![0.0; obs],
            final_global: vec![0.0; glob],
        }
    }

    pub fn n_entities(&self) -> usize {
        self.n_agents + self.n_targets
    }

    /// Observation tokens of one agent in one environment.
    pub fn obs_block(&self, env: usize, agent: usize) -> &[f32] {
        let block = self.n_entities() * TOKEN_FEATURES;
        let k = env * self.n_agents + agent;
        &self.obs[k * block..(k + 1) * block]
    }

    pub fn global_block(&self, env: usize) -> &[f32] {
        let block = self.n_entities() * TOKEN_FEATURES;
        &self.global[env * block..(env + 1) * block]
    }

    pub fn action_mask(&self, env: usize, agent: usize) -> [bool; env::N_ACTIONS] {
        env::valid_actions(self.rudder[env * self.n_agents + agent]).expect("rudder index kept in range")
    }
}

/// One environment's state, output buffers and identity.
pub struct EnvSlot<'a> {
    pub index: usize,
    pub master_seed: u64,
    pub world: WorldMut<'a>,
    pub out: OutputMut<'a>,
    pub final_obs: &'a mut [f32],
    pub final_global: &'a mut [f32],
}

impl BatchState {
    pub fn allocate(n_envs: usize, dims: Dims, master_seed: u64) -> Self {
        let pb = dims.particle_block();
        BatchState {
            n_envs,
            master_seed,
            n_agents: dims.agents,
            n_targets: dims.targets,
            n_particles: dims.particles,
            agents: vec![VehicleState::default(); n_envs * dims.agents],
            targets: vec![TargetState::default(); n_envs * dims.targets],
            contacts: vec![Contact::default(); n_envs * dims.agents * dims.agents],
            tracks: vec![Track::default(); n_envs * dims.pairs()],
            meas: vec![None; n_envs * dims.pairs()],
            px: vec![0.0; n_envs * pb],
            py: vec![0.0; n_envs * pb],
            vx: vec![0.0; n_envs * pb],
            vy: vec![0.0; n_envs * pb],
            w: vec![0.0; n_envs * pb],
            scratch: vec![0.0; n_envs * 4 * dims.particles],
            clocks: vec![EnvClock::default(); n_envs],
            rngs: (0..n_envs).map(|_| stream_rng(0)).collect(),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims { agents: self.n_agents, targets: self.n_targets, particles: self.n_particles }
    }

    /// Cuts the batch into per-environment views paired with their output
    /// buffers.
    pub fn slots<'a>(&'a mut self, out: &'a mut BatchOutput) -> Vec<EnvSlot<'a>> {
        let d = self.dims();
        assert_eq!(out.n_envs, self.n_envs, "output batch size mismatch");
        let (na, nt, pb) = (d.agents, d.targets, d.particle_block());
        let e = d.entities();
        let ob = na * e * TOKEN_FEATURES;
        let gb = e * TOKEN_FEATURES;
        let mut agents = self.agents.chunks_mut(na);
        let mut targets = self.targets.chunks_mut(nt);
        let mut contacts = self.contacts.chunks_mut(na * na);
        let mut tracks = self.tracks.chunks_mut(na * nt);
        let mut meas = self.meas.chunks_mut(na * nt);
        let mut px = self.px.chunks_mut(pb);
        let mut py = self.py.chunks_mut(pb);
        let mut vx = self.vx.chunks_mut(pb);
        let mut vy = self.vy.chunks_mut(pb);
        let mut w = self.w.chunks_mut(pb);
        let mut scratch = self.scratch.chunks_mut(4 * d.particles);
        let mut clocks = self.clocks.iter_mut();
        let mut rngs = self.rngs.iter_mut();
        let mut o_obs = out.obs.chunks_mut(ob);
        let mut o_glob = out.global.chunks_mut(gb);
        let mut o_rew = out.reward.iter_mut();
        let mut o_done = out.done.iter_mut();
        let mut o_err = out.track_err.chunks_mut(nt);
        let mut o_dist = out.min_dist.chunks_mut(nt);
        let mut o_col = out.collision.iter_mut();
        let mut o_lost = out.lost.chunks_mut(nt);
        let mut o_rud = out.rudder.chunks_mut(na);
        let mut f_obs = out.final_obs.chunks_mut(ob);
        let mut f_glob = out.final_global.chunks_mut(gb);
        let mut slots = Vec::with_capacity(self.n_envs);
        for index in 0..self.n_envs {
            slots.push(EnvSlot {
                index,
                master_seed: self.master_seed,
                world: WorldMut {
                    dims: d,
                    agents: agents.next().unwrap(),
                    targets: targets.next().unwrap(),
                    contacts: contacts.next().unwrap(),
                    tracks: tracks.next().unwrap(),
                    meas: meas.next().unwrap(),
                    px: px.next().unwrap(),
                    py: py.next().unwrap(),
                    vx: vx.next().unwrap(),
                    vy: vy.next().unwrap(),
                    w: w.next().unwrap(),
                    scratch: scratch.next().unwrap(),
                    clock: clocks.next().unwrap(),
                    rng: rngs.next().unwrap(),
                },
                out: OutputMut {
                    obs: o_obs.next().unwrap(),
                    global: o_glob.next().unwrap(),
                    reward: o_rew.next().unwrap(),
                    done: o_done.next().unwrap(),
                    track_err: o_err.next().unwrap(),
                    min_dist: o_dist.next().unwrap(),
                    collision: o_col.next().unwrap(),
                    lost: o_lost.next().unwrap(),
                    rudder: o_rud.next().unwrap(),
                },
                final_obs: f_obs.next().unwrap(),
                final_global: f_glob.next().unwrap(),
            });
        }
        slots
    }

    /// Copies environment `i` out as a standalone state.
    pub fn env_state(&self, i: usize) -> WorldState {
        let d = self.dims();
        let (na, nt, pb) = (d.agents, d.targets, d.particle_block());
        let r = |len: usize| i * len..(i + 1) * len;
        WorldState {
            agents: self.agents[r(na)].to_vec(),
            targets: self.targets[r(nt)].to_vec(),
            contacts: self.contacts[r(na * na)].to_vec(),
            tracks: self.tracks[r(na * nt)].to_vec(),
            meas: self.meas[r(na * nt)].to_vec(),
            px: self.px[r(pb)].to_vec(),
            py: self.py[r(pb)].to_vec(),
            vx: self.vx[r(pb)].to_vec(),
            vy: self.vy[r(pb)].to_vec(),
            w: self.w[r(pb)].to_vec(),
            scratch: self.scratch[r(4 * d.particles)].to_vec(),
            clock: self.clocks[i],
            rng: self.rngs[i].clone(),
        }
    }
}

/// Runs a closure over every slot. Implementations may run slots
/// concurrently; errors are reported for the lowest failing index.
pub trait Executor {
    fn for_each(&self, slots: &mut [EnvSlot<'_>], f: &(dyn Fn(&mut EnvSlot<'_>) -> Result<()> + Sync)) -> Result<()>;
}

/// In-order execution on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn for_each(&self, slots: &mut [EnvSlot<'_>], f: &(dyn Fn(&mut EnvSlot<'_>) -> Result<()> + Sync)) -> Result<()> {
        for s in slots.iter_mut() {
            f(s)?;
        }
        Ok(())
    }
}

/// Receives phase boundaries so callers can attribute time.
pub trait PhaseHook {
    fn begin(&mut self, _phase: Phase) {}
    fn end(&mut self, _phase: Phase) {}
}

impl PhaseHook for () {}

fn tag(index: usize, e: Error) -> Error {
    match e {
        Error::Contract(m) => Error::Contract(format!("env {index}: {m}")),
        Error::Spawn { .. } => Error::Argument(format!("env {index}: {e}")),
        other => other,
    }
}

/// Resets every environment to episode 0 of its stream. Environment `i`
/// equals `env::spawn(cfg, episode_seed(master_seed, i, 0))`.
pub fn vreset<E: Executor>(cfg: &EnvConfig, n_envs: usize, master_seed: u64, exec: &E) -> Result<(BatchState, BatchOutput)> {
    if n_envs == 0 {
        return Err(Error::Argument("n_envs must be >= 1".into()));
    }
    cfg.validate()?;
    let dims = Dims::of(cfg);
    let mut bs = BatchState::allocate(n_envs, dims, master_seed);
    let mut out = BatchOutput::new(n_envs, dims);
    {
        let mut slots = bs.slots(&mut out);
        exec.for_each(&mut slots, &|s| {
            s.world.clock.episode = 0;
            spawn_into(&mut s.world, cfg, episode_seed(s.master_seed, s.index, 0)).map_err(|e| tag(s.index, e))?;
            write_fresh(s, cfg);
            Ok(())
        })?;
    }
    Ok((bs, out))
}

fn write_fresh(s: &mut EnvSlot<'_>, cfg: &EnvConfig) {
    env::write_observations(&s.world, cfg, s.out.obs);
    env::write_global_state(&s.world, cfg, s.out.global);
    for (r, a) in s.out.rudder.iter_mut().zip(s.world.agents.iter()) {
        *r = a.rudder_index;
    }
}

/// Steps every environment once. `actions` is `n_envs x n_agents`.
/// Finished environments are re-spawned with their next episode seed; the
/// returned observation is then the fresh one and the last observation of
/// the finished episode is in `final_obs` / `final_global`.
pub fn vstep<E: Executor, H: PhaseHook>(
    bs: &mut BatchState,
    out: &mut BatchOutput,
    actions: &[u8],
    cfg: &EnvConfig,
    exec: &E,
    hook: &mut H,
) -> Result<()> {
    let na = bs.n_agents;
    if actions.len() != bs.n_envs * na {
        return Err(Error::Contract(format!("expected {} actions, got {}", bs.n_envs * na, actions.len())));
    }
    for i in 0..bs.n_envs {
        check_actions(&bs.agents[i * na..(i + 1) * na], &actions[i * na..(i + 1) * na]).map_err(|e| tag(i, e))?;
    }
    let mut slots = bs.slots(out);
    let act = |s: &EnvSlot<'_>| &actions[s.index * na..(s.index + 1) * na];

    hook.begin(Phase::Targets);
    exec.for_each(&mut slots, &|s| {
        phase_targets(&mut s.world, cfg);
        Ok(())
    })?;
    hook.end(Phase::Targets);
    hook.begin(Phase::Agents);
    exec.for_each(&mut slots, &|s| {
        let a = act(s);
        phase_agents(&mut s.world, cfg, a);
        Ok(())
    })?;
    hook.end(Phase::Agents);
    hook.begin(Phase::Measure);
    exec.for_each(&mut slots, &|s| {
        phase_measure(&mut s.world, cfg);
        Ok(())
    })?;
    hook.end(Phase::Measure);
    hook.begin(Phase::Filter);
    exec.for_each(&mut slots, &|s| {
        phase_filter(&mut s.world, cfg, true);
        Ok(())
    })?;
    hook.end(Phase::Filter);
    hook.begin(Phase::Comms);
    exec.for_each(&mut slots, &|s| {
        phase_comms(&mut s.world, cfg);
        Ok(())
    })?;
    hook.end(Phase::Comms);
    hook.begin(Phase::Outputs);
    exec.for_each(&mut slots, &|s| {
        phase_outputs(&mut s.world, cfg, &mut s.out);
        Ok(())
    })?;
    hook.end(Phase::Outputs);
    hook.begin(Phase::Reset);
    exec.for_each(&mut slots, &|s| {
        if *s.out.done {
            s.final_obs.copy_from_slice(s.out.obs);
            s.final_global.copy_from_slice(s.out.global);
            s.world.clock.episode += 1;
            let seed = episode_seed(s.master_seed, s.index, s.world.clock.episode);
            spawn_into(&mut s.world, cfg, seed).map_err(|e| tag(s.index, e))?;
            write_fresh(s, cfg);
        }
        Ok(())
    })?;
    hook.end(Phase::Reset);
    Ok(())
}

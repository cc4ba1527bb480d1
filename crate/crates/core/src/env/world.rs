//! Environment state storage. [`WorldState`] owns one environment; the
//! batch layout in [`crate::batch`] owns many with the same field split.
//! Stepping code only sees [`WorldMut`], a bundle of borrowed slices.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::kinematics::VehicleState;
use crate::rng::{stream_rng, StreamRng};
use crate::tracking::{ParticlesMut, ParticlesRef, RangeMeasurement, TrackEstimate};

use super::EnvConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TargetState {
    pub vehicle: VehicleState,
    /// Heading the target is steering towards.
    pub cmd_heading: f64,
    /// Steps left before the next direction change.
    pub countdown: u32,
    /// Consecutive steps without any agent detecting this target.
    pub miss_streak: u32,
}

/// What a receiving agent knows about another agent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub position: [f64; 3],
    pub heading: f64,
    pub speed: f64,
    pub age: u32,
    pub valid: bool,
}

/// One agent's track of one target; particles live in the particle block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub initialized: bool,
    pub estimate: TrackEstimate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnvClock {
    pub step: u32,
    /// Seed of the current episode.
    pub seed: u64,
    /// Episodes completed by this slot (auto-reset counter).
    pub episode: u64,
    pub target_speed_frac: f64,
}

/// Entity counts fixing every slice length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub agents: usize,
    pub targets: usize,
    pub particles: usize,
}

impl Dims {
    pub fn of(cfg: &EnvConfig) -> Self {
        Dims { agents: cfg.n_agents, targets: cfg.n_targets, particles: cfg.pf.n_particles }
    }

    pub fn pairs(&self) -> usize {
        self.agents * self.targets
    }

    pub fn entities(&self) -> usize {
        self.agents + self.targets
    }

    pub fn particle_block(&self) -> usize {
        self.pairs() * self.particles
    }
}

/// The full state of one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub agents: Vec<VehicleState>,
    pub targets: Vec<TargetState>,
    /// Row-major `[receiver][sender]`.
    pub contacts: Vec<Contact>,
    /// Row-major `[agent][target]`.
    pub tracks: Vec<Track>,
    /// This step's measurements, `[agent][target]`.
    pub meas: Vec<Option<RangeMeasurement>>,
    /// Particles, `[agent][target][particle]`.
    pub px: Vec<f64>,
    pub py: Vec<f64>,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
    pub w: Vec<f64>,
    pub scratch: Vec<f64>,
    pub clock: EnvClock,
    pub rng: StreamRng,
}

impl WorldState {
    pub fn allocate(dims: Dims) -> Self {
        let pb = dims.particle_block();
        WorldState {
            agents: vec![VehicleState::default(); dims.agents],
            targets: vec![TargetState::default(); dims.targets],
            contacts: vec![Contact::default(); dims.agents * dims.agents],
            tracks: vec![Track::default(); dims.pairs()],
            meas: vec![None; dims.pairs()],
            px: vec![0.0; pb],
            py: vec![0.0; pb],
            vx: vec![0.0; pb],
            vy: vec![0.0; pb],
            w: vec![0.0; pb],
            scratch: vec![0.0; 4 * dims.particles],
            clock: EnvClock::default(),
            rng: stream_rng(0),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            agents: self.agents.len(),
            targets: self.targets.len(),
            particles: self.scratch.len() / 4,
        }
    }

    pub fn view_mut(&mut self) -> WorldMut<'_> {
        let dims = self.dims();
        WorldMut {
            dims,
            agents: &mut self.agents,
            targets: &mut self.targets,
            contacts: &mut self.contacts,
            tracks: &mut self.tracks,
            meas: &mut self.meas,
            px: &mut self.px,
            py: &mut self.py,
            vx: &mut self.vx,
            vy: &mut self.vy,
            w: &mut self.w,
            scratch: &mut self.scratch,
            clock: &mut self.clock,
            rng: &mut self.rng,
        }
    }

    /// Particles of the `(agent, target)` filter.
    pub fn particles(&self, agent: usize, target: usize) -> ParticlesRef<'_> {
        let p = self.dims().particles;
        let r = (agent * self.targets.len() + target) * p..(agent * self.targets.len() + target + 1) * p;
        ParticlesRef {
            px: &self.px[r.clone()],
            py: &self.py[r.clone()],
            vx: &self.vx[r.clone()],
            vy: &self.vy[r.clone()],
            w: &self.w[r],
        }
    }

    pub fn contact(&self, receiver: usize, sender: usize) -> &Contact {
        &self.contacts[receiver * self.agents.len() + sender]
    }

    pub fn track(&self, agent: usize, target: usize) -> &Track {
        &self.tracks[agent * self.targets.len() + target]
    }
}

/// Mutable borrowed view of one environment's state.
pub struct WorldMut<'a> {
    pub dims: Dims,
    pub agents: &'a mut [VehicleState],
    pub targets: &'a mut [TargetState],
    pub contacts: &'a mut [Contact],
    pub tracks: &'a mut [Track],
    pub meas: &'a mut [Option<RangeMeasurement>],
    pub px: &'a mut [f64],
    pub py: &'a mut [f64],
    pub vx: &'a mut [f64],
    pub vy: &'a mut [f64],
    pub w: &'a mut [f64],
    pub scratch: &'a mut [f64],
    pub clock: &'a mut EnvClock,
    pub rng: &'a mut StreamRng,
}

impl WorldMut<'_> {
    /// Splits out the particles of one filter together with the scratch
    /// buffer and the random stream.
    pub fn filter(&mut self, agent: usize, target: usize) -> (ParticlesMut<'_>, &mut [f64], &mut StreamRng) {
        let p = self.dims.particles;
        let k = agent * self.dims.targets + target;
        let r = k * p..(k + 1) * p;
        (
            ParticlesMut {
                px: &mut self.px[r.clone()],
                py: &mut self.py[r.clone()],
                vx: &mut self.vx[r.clone()],
                vy: &mut self.vy[r.clone()],
                w: &mut self.w[r],
            },
            &mut *self.scratch,
            &mut *self.rng,
        )
    }

    pub fn filter_ref(&self, agent: usize, target: usize) -> ParticlesRef<'_> {
        let p = self.dims.particles;
        let k = agent * self.dims.targets + target;
        let r = k * p..(k + 1) * p;
        ParticlesRef {
            px: &self.px[r.clone()],
            py: &self.py[r.clone()],
            vx: &self.vx[r.clone()],
            vy: &self.vy[r.clone()],
            w: &self.w[r],
        }
    }
}

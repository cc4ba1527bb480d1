//! Observation and global-state token construction.
//!
//! Feature columns (shared by both matrices):
//!
//! | col | observation                         | global state                |
//! |-----|-------------------------------------|-----------------------------|
//! | 0-2 | position relative to self, body frame | absolute position         |
//! | 3-4 | sin/cos of heading relative to self | sin/cos of absolute heading |
//! | 5   | speed                               | speed                       |
//! | 6-8 | one-hot self / agent / target       | one-hot (self always 0)     |
//! | 9   | validity                            | 1                           |
//! | 10  | information age                     | 0                           |
//! | 11  | track spread (targets)              | best track error (targets)  |
//!
//! Body frame: x along the observer's heading, y to its left. Positions,
//! speeds, ages and spreads are divided by the [`ObsScale`](super::ObsScale)
//! constants.

use num_traits::Float;

use crate::math::hypot2;

use super::world::WorldMut;
use super::EnvConfig;

pub const TOKEN_FEATURES: usize = 12;

pub const COL_POS: usize = 0;
pub const COL_SIN: usize = 3;
pub const COL_COS: usize = 4;
pub const COL_SPEED: usize = 5;
pub const COL_SELF: usize = 6;
pub const COL_AGENT: usize = 7;
pub const COL_TARGET: usize = 8;
pub const COL_VALID: usize = 9;
pub const COL_AGE: usize = 10;
pub const COL_EXTRA: usize = 11;

/// Cap applied to the scaled tracking error in the global state; also the
/// value used when no agent holds a track.
pub const MAX_SCALED_ERROR: f64 = 5.0;

/// Minimum over agents of the 2D distance between an agent's estimate and
/// the true target position. `None` when no agent holds a track.
pub fn best_track_error(w: &WorldMut<'_>, target: usize) -> Option<f64> {
    let t = &w.targets[target].vehicle;
    let mut best: Option<f64> = None;
    for a in 0..w.dims.agents {
        let tr = &w.tracks[a * w.dims.targets + target];
        if tr.initialized {
            let e = hypot2(tr.estimate.position_xy[0] - t.position[0], tr.estimate.position_xy[1] - t.position[1]);
            best = Some(best.map_or(e, |b: f64| b.min(e)));
        }
    }
    best
}

/// Writes one `n_entities x TOKEN_FEATURES` block per agent into `obs`.
pub fn write_observations(w: &WorldMut<'_>, cfg: &EnvConfig, obs: &mut [f32]) {
    let n_ent = w.dims.entities();
    let block = n_ent * TOKEN_FEATURES;
    debug_assert_eq!(obs.len(), w.dims.agents * block);
    for a in 0..w.dims.agents {
        write_observation(w, cfg, a, &mut obs[a * block..(a + 1) * block]);
    }
}

pub fn write_observation(w: &WorldMut<'_>, cfg: &EnvConfig, agent: usize, out: &mut [f32]) {
    let sc = &cfg.scale;
    let me = &w.agents[agent];
    let (s, c) = (Float::sin(me.heading), Float::cos(me.heading));
    let to_body = |dx: f64, dy: f64| (c * dx + s * dy, -s * dx + c * dy);
    out.iter_mut().for_each(|v| *v = 0.0);
    let n_agents = w.dims.agents;
    for e in 0..n_agents {
        let row = &mut out[e * TOKEN_FEATURES..(e + 1) * TOKEN_FEATURES];
        if e == agent {
            row[COL_COS] = 1.0;
            row[COL_SPEED] = (me.speed / sc.speed) as f32;
            row[COL_SELF] = 1.0;
            row[COL_VALID] = 1.0;
            continue;
        }
        row[COL_AGENT] = 1.0;
        let ct = &w.contacts[agent * n_agents + e];
        if !ct.valid {
            continue;
        }
        let (bx, by) = to_body(ct.position[0] - me.position[0], ct.position[1] - me.position[1]);
        let rel = ct.heading - me.heading;
        row[COL_POS] = (bx / sc.position) as f32;
        row[COL_POS + 1] = (by / sc.position) as f32;
        row[COL_POS + 2] = ((ct.position[2] - me.position[2]) / sc.position) as f32;
        row[COL_SIN] = Float::sin(rel) as f32;
        row[COL_COS] = Float::cos(rel) as f32;
        row[COL_SPEED] = (ct.speed / sc.speed) as f32;
        row[COL_VALID] = 1.0;
        row[COL_AGE] = (ct.age as f64 / sc.age) as f32;
    }
    for t in 0..w.dims.targets {
        let e = n_agents + t;
        let row = &mut out[e * TOKEN_FEATURES..(e + 1) * TOKEN_FEATURES];
        row[COL_TARGET] = 1.0;
        let tr = &w.tracks[agent * w.dims.targets + t];
        if !tr.initialized {
            continue;
        }
        let est = &tr.estimate;
        let (bx, by) = to_body(est.position_xy[0] - me.position[0], est.position_xy[1] - me.position[1]);
        row[COL_POS] = (bx / sc.position) as f32;
        row[COL_POS + 1] = (by / sc.position) as f32;
        // depth is known to the trackers
        row[COL_POS + 2] = ((w.targets[t].vehicle.position[2] - me.position[2]) / sc.position) as f32;
        let speed = hypot2(est.velocity_xy[0], est.velocity_xy[1]);
        if speed > 1e-9 {
            let rel = Float::atan2(est.velocity_xy[1], est.velocity_xy[0]) - me.heading;
            row[COL_SIN] = Float::sin(rel) as f32;
            row[COL_COS] = Float::cos(rel) as f32;
        }
        row[COL_SPEED] = (speed / sc.speed) as f32;
        row[COL_VALID] = 1.0;
        row[COL_AGE] = (est.age as f64 / sc.age) as f32;
        row[COL_EXTRA] = (est.spread / sc.spread) as f32;
    }
}

/// True state of every entity, agents first.
pub fn write_global_state(w: &WorldMut<'_>, cfg: &EnvConfig, out: &mut [f32]) {
    let sc = &cfg.scale;
    out.iter_mut().for_each(|v| *v = 0.0);
    let vehicles = w.agents.iter().chain(w.targets.iter().map(|t| &t.vehicle));
    for (e, v) in vehicles.enumerate() {
        let row = &mut out[e * TOKEN_FEATURES..(e + 1) * TOKEN_FEATURES];
        for k in 0..3 {
            row[COL_POS + k] = (v.position[k] / sc.position) as f32;
        }
        row[COL_SIN] = Float::sin(v.heading) as f32;
        row[COL_COS] = Float::cos(v.heading) as f32;
        row[COL_SPEED] = (v.speed / sc.speed) as f32;
        row[COL_VALID] = 1.0;
        if e < w.dims.agents {
            row[COL_AGENT] = 1.0;
        } else {
            row[COL_TARGET] = 1.0;
            let err = best_track_error(w, e - w.dims.agents)
                .map_or(MAX_SCALED_ERROR, |x| (x / sc.spread).min(MAX_SCALED_ERROR));
            row[COL_EXTRA] = err as f32;
        }
    }
}

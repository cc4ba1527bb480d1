//! Range-only target estimation in the horizontal plane.
//!
//! A constant-velocity particle filter handles moving targets; linearised
//! least-squares trilateration handles quasi-static ones. Particle storage is
//! structure-of-arrays so the environment can keep every filter of a batch in
//! one contiguous block and hand out [`ParticlesMut`] views.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::hypot2;
use crate::rng::{stream_rng, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeMeasurement {
    pub origin_xy: [f64; 2],
    pub range_2d: f64,
    pub noise_std: f64,
    pub step_index: u32,
}

/// Horizontal projection of a slant range. The flag is set when the depth
/// difference exceeds the measured range and the result was clamped to 0.
pub fn slant_to_horizontal(range_3d: f64, depth_diff: f64) -> (f64, bool) {
    let sq = range_3d * range_3d - depth_diff * depth_diff;
    if sq < 0.0 {
        (0.0, true)
    } else {
        (Float::sqrt(sq), false)
    }
}

/// Filter tuning shared by every particle set of an environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PfConfig {
    pub n_particles: usize,
    pub process_noise_pos: f64,
    pub process_noise_vel: f64,
    /// Particle speed cap as a multiple of the fastest target speed.
    pub max_speed_factor: f64,
}

impl Default for PfConfig {
    fn default() -> Self {
        PfConfig { n_particles: 1024, process_noise_pos: 1.0, process_noise_vel: 0.05, max_speed_factor: 1.2 }
    }
}

/// Mutable view over one filter's particles.
pub struct ParticlesMut<'a> {
    pub px: &'a mut [f64],
    pub py: &'a mut [f64],
    pub vx: &'a mut [f64],
    pub vy: &'a mut [f64],
    pub w: &'a mut [f64],
}

/// Read-only view over one filter's particles.
#[derive(Clone, Copy)]
pub struct ParticlesRef<'a> {
    pub px: &'a [f64],
    pub py: &'a [f64],
    pub vx: &'a [f64],
    pub vy: &'a [f64],
    pub w: &'a [f64],
}

impl ParticlesMut<'_> {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn reborrow(&mut self) -> ParticlesMut<'_> {
        ParticlesMut { px: self.px, py: self.py, vx: self.vx, vy: self.vy, w: self.w }
    }

    pub fn as_ref(&self) -> ParticlesRef<'_> {
        ParticlesRef { px: self.px, py: self.py, vx: self.vx, vy: self.vy, w: self.w }
    }
}

/// Owned particle set with its own random stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    pub px: Vec<f64>,
    pub py: Vec<f64>,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
    pub w: Vec<f64>,
    pub max_speed: f64,
    pub rng: StreamRng,
    scratch: Vec<f64>,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn view(&mut self) -> (ParticlesMut<'_>, &mut StreamRng, &mut [f64]) {
        (
            ParticlesMut { px: &mut self.px, py: &mut self.py, vx: &mut self.vx, vy: &mut self.vy, w: &mut self.w },
            &mut self.rng,
            &mut self.scratch,
        )
    }

    pub fn as_ref(&self) -> ParticlesRef<'_> {
        ParticlesRef { px: &self.px, py: &self.py, vx: &self.vx, vy: &self.vy, w: &self.w }
    }

    pub fn predict(&mut self, dt: f64, process_noise_pos: f64, process_noise_vel: f64) {
        let max_speed = self.max_speed;
        let (p, rng, _) = self.view();
        pf_predict(p, dt, process_noise_pos, process_noise_vel, max_speed, rng);
    }

    /// Returns true when every likelihood underflowed and weights were reset.
    pub fn update(&mut self, meas: &[RangeMeasurement]) -> bool {
        let (p, _, _) = self.view();
        pf_update(p, meas)
    }

    pub fn resample(&mut self) {
        let (p, rng, scratch) = self.view();
        pf_resample(p, scratch, rng);
    }

    pub fn resample_if_degenerate(&mut self) -> bool {
        let (p, rng, scratch) = self.view();
        pf_resample_if_needed(p, scratch, rng)
    }

    pub fn effective_sample_size(&self) -> f64 {
        effective_sample_size(&self.w)
    }

    pub fn estimate(&self) -> TrackEstimate {
        pf_estimate(self.as_ref())
    }
}

/// Uniform disc initialisation around `center`.
pub fn pf_init(center_xy: [f64; 2], radius: f64, n_particles: usize, max_speed: f64, seed: u64) -> Result<ParticleSet> {
    if n_particles == 0 {
        return Err(Error::Argument("n_particles must be >= 1".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::Argument("radius must be > 0".into()));
    }
    let mut ps = empty_set(n_particles, max_speed, seed);
    let (p, rng, _) = ps.view();
    fill_disc(p, center_xy, radius, max_speed, rng);
    Ok(ps)
}

/// Initialisation on the annulus implied by one range measurement.
pub fn pf_init_ring(meas: &RangeMeasurement, n_particles: usize, max_speed: f64, seed: u64) -> Result<ParticleSet> {
    if n_particles == 0 {
        return Err(Error::Argument("n_particles must be >= 1".into()));
    }
    let mut ps = empty_set(n_particles, max_speed, seed);
    let (p, rng, _) = ps.view();
    fill_ring(p, meas, max_speed, rng);
    Ok(ps)
}

fn empty_set(n: usize, max_speed: f64, seed: u64) -> ParticleSet {
    ParticleSet {
        px: vec![0.0; n],
        py: vec![0.0; n],
        vx: vec![0.0; n],
        vy: vec![0.0; n],
        w: vec![0.0; n],
        max_speed,
        rng: stream_rng(seed),
        scratch: vec![0.0; 4 * n],
    }
}

fn random_velocity<R: Rng + ?Sized>(rng: &mut R, max_speed: f64) -> (f64, f64) {
    let speed = max_speed * rng.random::<f64>();
    let dir = rng.random_range(-core::f64::consts::PI..core::f64::consts::PI);
    (speed * Float::cos(dir), speed * Float::sin(dir))
}

pub fn fill_disc<R: Rng + ?Sized>(p: ParticlesMut<'_>, center: [f64; 2], radius: f64, max_speed: f64, rng: &mut R) {
    let n = p.w.len();
    let w0 = 1.0 / n as f64;
    for i in 0..n {
        let r = radius * Float::sqrt(rng.random::<f64>());
        let a = rng.random_range(-core::f64::consts::PI..core::f64::consts::PI);
        p.px[i] = center[0] + r * Float::cos(a);
        p.py[i] = center[1] + r * Float::sin(a);
        let (vx, vy) = random_velocity(rng, max_speed);
        p.vx[i] = vx;
        p.vy[i] = vy;
        p.w[i] = w0;
    }
}

pub fn fill_ring<R: Rng + ?Sized>(p: ParticlesMut<'_>, meas: &RangeMeasurement, max_speed: f64, rng: &mut R) {
    let n = p.w.len();
    let w0 = 1.0 / n as f64;
    for i in 0..n {
        let z: f64 = StandardNormal.sample(rng);
        let r = Float::max(meas.range_2d + meas.noise_std * z, 0.0);
        let a = rng.random_range(-core::f64::consts::PI..core::f64::consts::PI);
        p.px[i] = meas.origin_xy[0] + r * Float::cos(a);
        p.py[i] = meas.origin_xy[1] + r * Float::sin(a);
        let (vx, vy) = random_velocity(rng, max_speed);
        p.vx[i] = vx;
        p.vy[i] = vy;
        p.w[i] = w0;
    }
}

/// Constant-velocity prediction with Gaussian process noise; speed is capped
/// at `max_speed` and weights are untouched.
pub fn pf_predict<R: Rng + ?Sized>(
    p: ParticlesMut<'_>,
    dt: f64,
    noise_pos: f64,
    noise_vel: f64,
    max_speed: f64,
    rng: &mut R,
) {
    for i in 0..p.w.len() {
        let zx: f64 = StandardNormal.sample(rng);
        let zy: f64 = StandardNormal.sample(rng);
        let zvx: f64 = StandardNormal.sample(rng);
        let zvy: f64 = StandardNormal.sample(rng);
        p.px[i] += p.vx[i] * dt + noise_pos * zx;
        p.py[i] += p.vy[i] * dt + noise_pos * zy;
        let mut vx = p.vx[i] + noise_vel * zvx;
        let mut vy = p.vy[i] + noise_vel * zvy;
        let s = hypot2(vx, vy);
        if s > max_speed {
            let k = max_speed / s;
            vx *= k;
            vy *= k;
        }
        p.vx[i] = vx;
        p.vy[i] = vy;
    }
}

/// Multiplies weights by the Gaussian range likelihood of every measurement
/// and renormalises. Returns true (and resets to uniform) when the total
/// underflows to zero or a subnormal.
pub fn pf_update(p: ParticlesMut<'_>, meas: &[RangeMeasurement]) -> bool {
    let n = p.w.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut log_lik = 0.0;
        for m in meas {
            let d = hypot2(p.px[i] - m.origin_xy[0], p.py[i] - m.origin_xy[1]);
            let z = (d - m.range_2d) / m.noise_std;
            log_lik -= 0.5 * z * z;
        }
        let w = p.w[i] * Float::exp(log_lik);
        p.w[i] = w;
        total += w;
    }
    // a subnormal total would overflow on inversion
    if !(total >= f64::MIN_POSITIVE) || !total.is_finite() {
        let w0 = 1.0 / n as f64;
        p.w.iter_mut().for_each(|w| *w = w0);
        return true;
    }
    let inv = 1.0 / total;
    p.w.iter_mut().for_each(|w| *w *= inv);
    false
}

pub fn effective_sample_size(w: &[f64]) -> f64 {
    1.0 / w.iter().map(|x| x * x).sum::<f64>()
}

/// Systematic resampling. `scratch` must hold at least `4 * n` values.
pub fn pf_resample<R: Rng + ?Sized>(p: ParticlesMut<'_>, scratch: &mut [f64], rng: &mut R) {
    let n = p.w.len();
    let (sx, rest) = scratch.split_at_mut(n);
    let (sy, rest) = rest.split_at_mut(n);
    let (svx, rest) = rest.split_at_mut(n);
    let svy = &mut rest[..n];
    let step = 1.0 / n as f64;
    let mut u = rng.random::<f64>() * step;
    let mut cum = p.w[0];
    let mut j = 0;
    for i in 0..n {
        while u > cum && j + 1 < n {
            j += 1;
            cum += p.w[j];
        }
        sx[i] = p.px[j];
        sy[i] = p.py[j];
        svx[i] = p.vx[j];
        svy[i] = p.vy[j];
        u += step;
    }
    p.px.copy_from_slice(sx);
    p.py.copy_from_slice(sy);
    p.vx.copy_from_slice(svx);
    p.vy.copy_from_slice(svy);
    p.w.iter_mut().for_each(|w| *w = step);
}

/// Resamples when the effective sample size drops below half the particles.
pub fn pf_resample_if_needed<R: Rng + ?Sized>(p: ParticlesMut<'_>, scratch: &mut [f64], rng: &mut R) -> bool {
    let n = p.w.len() as f64;
    if effective_sample_size(p.w) < 0.5 * n {
        pf_resample(p, scratch, rng);
        true
    } else {
        false
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackEstimate {
    pub position_xy: [f64; 2],
    pub velocity_xy: [f64; 2],
    /// Weighted RMS distance of the particles from `position_xy`.
    pub spread: f64,
    /// Steps since the last measurement update.
    pub age: u32,
}

/// Weighted mean position and velocity with RMS spread. `age` is left at 0.
pub fn pf_estimate(p: ParticlesRef<'_>) -> TrackEstimate {
    let mut mx = 0.0;
    let mut my = 0.0;
    let mut mvx = 0.0;
    let mut mvy = 0.0;
    let mut wsum = 0.0;
    for i in 0..p.w.len() {
        let w = p.w[i];
        mx += w * p.px[i];
        my += w * p.py[i];
        mvx += w * p.vx[i];
        mvy += w * p.vy[i];
        wsum += w;
    }
    let inv = 1.0 / wsum;
    mx *= inv;
    my *= inv;
    mvx *= inv;
    mvy *= inv;
    let mut var = 0.0;
    for i in 0..p.w.len() {
        let dx = p.px[i] - mx;
        let dy = p.py[i] - my;
        var += p.w[i] * (dx * dx + dy * dy);
    }
    TrackEstimate {
        position_xy: [mx, my],
        velocity_xy: [mvx, mvy],
        spread: Float::sqrt(Float::max(var * inv, 0.0)),
        age: 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsFix {
    pub position: [f64; 2],
    /// RMS-free residual norm of the range equations at the solution.
    pub residual_norm: f64,
}

/// Linearised least-squares trilateration: every circle equation minus the
/// first gives a linear system in the unknown position, solved through the
/// 2x2 normal equations.
pub fn ls_trilaterate(meas: &[RangeMeasurement]) -> Result<LsFix> {
    if meas.len() < 3 {
        return Err(Error::RankDeficient(alloc::format!("{} measurements, need at least 3", meas.len())));
    }
    let o0 = meas[0].origin_xy;
    let r0 = meas[0].range_2d;
    let k0 = o0[0] * o0[0] + o0[1] * o0[1];
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for m in &meas[1..] {
        let o = m.origin_xy;
        let ax = 2.0 * (o[0] - o0[0]);
        let ay = 2.0 * (o[1] - o0[1]);
        let rhs = r0 * r0 - m.range_2d * m.range_2d + (o[0] * o[0] + o[1] * o[1]) - k0;
        a11 += ax * ax;
        a12 += ax * ay;
        a22 += ay * ay;
        b1 += ax * rhs;
        b2 += ay * rhs;
    }
    let det = a11 * a22 - a12 * a12;
    let scale = (a11 + a22) * (a11 + a22);
    if !(scale > 0.0) || Float::abs(det) <= 1e-10 * scale {
        return Err(Error::RankDeficient("measurement origins are collinear".into()));
    }
    let x = (a22 * b1 - a12 * b2) / det;
    let y = (a11 * b2 - a12 * b1) / det;
    let residual_norm = Float::sqrt(
        meas.iter()
            .map(|m| {
                let e = hypot2(x - m.origin_xy[0], y - m.origin_xy[1]) - m.range_2d;
                e * e
            })
            .sum::<f64>(),
    );
    Ok(LsFix { position: [x, y], residual_norm })
}

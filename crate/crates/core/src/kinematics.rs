//! Simplified long-range AUV motion model.
//!
//! Vehicles move in the horizontal plane at constant speed. Each step the
//! heading changes by a rudder-dependent amount `delta = a * gamma + b`
//! taken from a linear model fitted per `(speed, dt)` bucket, plus optional
//! Gaussian heading noise; the position then advances by `speed * dt` along
//! the new heading.

use alloc::vec::Vec;
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::wrap_angle;

/// Largest rudder deflection in radians.
pub const RUDDER_MAX: f64 = 0.24;
/// Number of discrete rudder settings.
pub const RUDDER_STEPS: usize = 5;
/// Yaw gain of the reference turn model, rad of heading per (rad rudder * m travelled).
pub const REFERENCE_TURN_GAIN: f64 = 0.125;
/// Default Gaussian heading noise per step.
pub const DEFAULT_HEADING_NOISE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// East, north, depth in metres.
    pub position: [f64; 3],
    pub heading: f64,
    pub speed: f64,
    pub rudder_index: u8,
}

impl VehicleState {
    pub fn new(position: [f64; 3], heading: f64, speed: f64) -> Self {
        VehicleState { position, heading: wrap_angle(heading), speed, rudder_index: 2 }
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.position[0], self.position[1]]
    }
}

impl Default for VehicleState {
    fn default() -> Self {
        VehicleState { position: [0.0; 3], heading: 0.0, speed: 0.0, rudder_index: 2 }
    }
}

/// Linear heading-delta coefficients for one `(speed, dt)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadingBucket {
    pub speed: f64,
    pub dt: f64,
    pub slope: f64,
    pub intercept: f64,
}

/// Ensemble of per-bucket linear models. Lookup is exact on `(speed, dt)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadingDeltaModel {
    pub buckets: Vec<HeadingBucket>,
    pub noise_std: f64,
}

impl HeadingDeltaModel {
    pub fn new(buckets: Vec<HeadingBucket>, noise_std: f64) -> Result<Self> {
        let m = HeadingDeltaModel { buckets, noise_std };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0) {
            return Err(Error::config("heading_model.noise_std", "must be >= 0"));
        }
        for b in &self.buckets {
            if !(b.slope.is_finite() && b.intercept.is_finite()) {
                return Err(Error::config("heading_model.buckets", "non-finite coefficient"));
            }
        }
        Ok(())
    }

    pub fn bucket(&self, speed: f64, dt: f64) -> Result<&HeadingBucket> {
        self.buckets
            .iter()
            .find(|b| b.speed == speed && b.dt == dt)
            .ok_or(Error::MissingBucket { speed, dt })
    }

    /// The shipped model: fitted against [`reference_turn_oracle`] samples for
    /// speeds 0.5..=2.0 m/s and steps of 10, 30 and 60 s.
    pub fn default_fitted() -> Self {
        let mut rng = crate::rng::stream_rng(0x5eed_cafe);
        let data = synthesize_calibration(&DEFAULT_SPEEDS, &DEFAULT_DTS, 200, 0.005, &mut rng)
            .expect("reference grid is inside the oracle domain");
        let fit = fit_heading_model(&data).expect("synthetic calibration data is well posed");
        let mut model = fit.model;
        model.noise_std = DEFAULT_HEADING_NOISE;
        model
    }
}

const DEFAULT_SPEEDS: [f64; 4] = [0.5, 1.0, 1.5, 2.0];
const DEFAULT_DTS: [f64; 3] = [10.0, 30.0, 60.0];

/// Deterministic heading change for a rudder angle (no noise).
pub fn heading_delta(model: &HeadingDeltaModel, rudder_angle: f64, speed: f64, dt: f64) -> Result<f64> {
    let b = model.bucket(speed, dt)?;
    Ok(b.slope * rudder_angle + b.intercept)
}

/// Advances a vehicle given an already computed heading change.
pub fn advance(state: &VehicleState, heading_delta: f64, dt: f64, noise: f64) -> VehicleState {
    let heading = wrap_angle(state.heading + heading_delta + noise);
    let step = state.speed * dt;
    VehicleState {
        position: [
            state.position[0] + step * Float::cos(heading),
            state.position[1] + step * Float::sin(heading),
            state.position[2],
        ],
        heading,
        ..*state
    }
}

/// One motion-model step for a rudder angle. `noise` is a caller-supplied draw.
pub fn step_vehicle(
    state: &VehicleState,
    model: &HeadingDeltaModel,
    rudder_angle: f64,
    dt: f64,
    noise: f64,
) -> Result<VehicleState> {
    let delta = heading_delta(model, rudder_angle, state.speed, dt)?;
    Ok(advance(state, delta, dt, noise))
}

/// Idealised constant-turn-rate reference: yaw rate `k * gamma * speed`,
/// integrated over `dt`. Stands in for simulator-collected trajectories.
pub fn reference_turn_oracle(rudder_angle: f64, speed: f64, dt: f64) -> Result<f64> {
    if !(Float::abs(rudder_angle) <= RUDDER_MAX + 1e-12) {
        return Err(Error::RudderDomain(rudder_angle));
    }
    Ok(REFERENCE_TURN_GAIN * rudder_angle * speed * dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub gamma: f64,
    pub speed: f64,
    pub dt: f64,
    pub dpsi: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDataset {
    pub rows: Vec<CalibrationRow>,
}

/// Samples `rows_per_bucket` rudder angles uniformly in the rudder range for
/// every `(speed, dt)` pair and records the oracle response plus noise.
pub fn synthesize_calibration<R: Rng + ?Sized>(
    speeds: &[f64],
    dts: &[f64],
    rows_per_bucket: usize,
    noise_std: f64,
    rng: &mut R,
) -> Result<CalibrationDataset> {
    let mut rows = Vec::with_capacity(speeds.len() * dts.len() * rows_per_bucket);
    for &speed in speeds {
        for &dt in dts {
            for _ in 0..rows_per_bucket {
                let gamma = rng.random_range(-RUDDER_MAX..=RUDDER_MAX);
                let z: f64 = StandardNormal.sample(rng);
                let dpsi = reference_turn_oracle(gamma, speed, dt)? + noise_std * z;
                rows.push(CalibrationRow { gamma, speed, dt, dpsi });
            }
        }
    }
    Ok(CalibrationDataset { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketFit {
    pub bucket: HeadingBucket,
    pub samples: usize,
    pub mae: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub model: HeadingDeltaModel,
    pub buckets: Vec<BucketFit>,
    pub global_r2: f64,
}

/// Ordinary least squares per `(speed, dt)` bucket. Buckets come out sorted
/// by speed then dt; MAE and R² are measured on the fitting data.
pub fn fit_heading_model(data: &CalibrationDataset) -> Result<FitReport> {
    let mut keys: Vec<(f64, f64)> = Vec::new();
    for r in &data.rows {
        if !keys.iter().any(|&(s, d)| s == r.speed && d == r.dt) {
            keys.push((r.speed, r.dt));
        }
    }
    keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let mut fits = Vec::with_capacity(keys.len());
    let mut sse_all = 0.0;
    for &(speed, dt) in &keys {
        let rows: Vec<&CalibrationRow> =
            data.rows.iter().filter(|r| r.speed == speed && r.dt == dt).collect();
        let n = rows.len() as f64;
        let mean_g = rows.iter().map(|r| r.gamma).sum::<f64>() / n;
        let mean_y = rows.iter().map(|r| r.dpsi).sum::<f64>() / n;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        let mut syy = 0.0;
        for r in &rows {
            let dx = r.gamma - mean_g;
            let dy = r.dpsi - mean_y;
            sxx += dx * dx;
            sxy += dx * dy;
            syy += dy * dy;
        }
        let distinct = rows.iter().any(|r| r.gamma != rows[0].gamma);
        if !distinct || sxx <= 0.0 {
            return Err(Error::DegenerateBucket { speed, dt });
        }
        let slope = sxy / sxx;
        let intercept = mean_y - slope * mean_g;
        let mut abs_err = 0.0;
        let mut sse = 0.0;
        for r in &rows {
            let e = r.dpsi - (slope * r.gamma + intercept);
            abs_err += Float::abs(e);
            sse += e * e;
        }
        sse_all += sse;
        let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
        fits.push(BucketFit {
            bucket: HeadingBucket { speed, dt, slope, intercept },
            samples: rows.len(),
            mae: abs_err / n,
            r2,
        });
    }

    let n_all = data.rows.len() as f64;
    let mean_all = data.rows.iter().map(|r| r.dpsi).sum::<f64>() / n_all;
    let sst_all: f64 = data.rows.iter().map(|r| (r.dpsi - mean_all) * (r.dpsi - mean_all)).sum();
    let global_r2 = if sst_all > 0.0 { 1.0 - sse_all / sst_all } else { 1.0 };

    let model = HeadingDeltaModel {
        buckets: fits.iter().map(|f| f.bucket).collect(),
        noise_std: DEFAULT_HEADING_NOISE,
    };
    Ok(FitReport { model, buckets: fits, global_r2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn model(slope: f64, intercept: f64) -> HeadingDeltaModel {
        HeadingDeltaModel::new(
            alloc::vec![HeadingBucket { speed: 1.0, dt: 30.0, slope, intercept }],
            0.02,
        )
        .unwrap()
    }

    #[test]
    fn delta_lookup_and_symmetry() {
        let m = model(3.75, 0.0);
        assert_eq!(heading_delta(&m, 0.0, 1.0, 30.0).unwrap(), 0.0);
        let p = heading_delta(&m, 0.12, 1.0, 30.0).unwrap();
        let n = heading_delta(&m, -0.12, 1.0, 30.0).unwrap();
        assert_eq!(p, -n);
        match heading_delta(&m, 0.1, 2.0, 30.0) {
            Err(Error::MissingBucket { speed, dt }) => assert_eq!((speed, dt), (2.0, 30.0)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn default_model_tracks_oracle() {
        let m = HeadingDeltaModel::default_fitted();
        let fitted = heading_delta(&m, 0.24, 1.0, 30.0).unwrap();
        let truth = reference_turn_oracle(0.24, 1.0, 30.0).unwrap();
        assert!((fitted - truth).abs() < 0.015, "{fitted} vs {truth}");
        assert_eq!(m.noise_std, 0.02);
    }

    #[test]
    fn straight_line_step() {
        let m = model(3.75, 0.0);
        let s = VehicleState::new([0.0, 0.0, 0.0], 0.0, 1.0);
        let n = step_vehicle(&s, &m, 0.0, 30.0, 0.0).unwrap();
        assert!((n.position[0] - 30.0).abs() < 1e-12);
        assert!(n.position[1].abs() < 1e-12);
        assert_eq!(n.position[2], 0.0);
    }

    #[test]
    fn heading_accumulates() {
        let c = 0.45;
        let mut s = VehicleState::new([0.0, 0.0, 5.0], 0.3, 1.0);
        for k in 1..=20 {
            s = advance(&s, c, 30.0, 0.0);
            let expect = wrap_angle(0.3 + k as f64 * c);
            assert!((s.heading - expect).abs() < 1e-9);
            assert_eq!(s.position[2], 5.0);
        }
    }

    #[test]
    fn zero_speed_rotates_in_place() {
        let s = VehicleState::new([4.0, -2.0, 0.0], 0.0, 0.0);
        let n = advance(&s, 0.5, 30.0, 0.0);
        assert_eq!(n.position, s.position);
        assert_eq!(n.heading, 0.5);
    }

    #[test]
    fn oracle_properties() {
        assert_eq!(reference_turn_oracle(0.0, 1.0, 30.0).unwrap(), 0.0);
        for g in [-0.24, -0.1, 0.05, 0.24] {
            let d = reference_turn_oracle(g, 1.0, 30.0).unwrap();
            assert_eq!(d.signum(), g.signum());
        }
        assert!(matches!(reference_turn_oracle(0.3, 1.0, 30.0), Err(Error::RudderDomain(_))));
        // linear in dt
        for dt in [5.0, 10.0, 60.0] {
            let lhs = reference_turn_oracle(0.17, 1.3, dt).unwrap();
            let rhs = dt / 30.0 * reference_turn_oracle(0.17, 1.3, 30.0).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_and_flat_fits() {
        let rows = (0..9)
            .map(|i| {
                let gamma = -0.24 + 0.06 * i as f64;
                CalibrationRow { gamma, speed: 1.0, dt: 30.0, dpsi: 0.5 * gamma }
            })
            .collect();
        let fit = fit_heading_model(&CalibrationDataset { rows }).unwrap();
        let b = &fit.buckets[0];
        assert!((b.bucket.slope - 0.5).abs() < 1e-9);
        assert!(b.bucket.intercept.abs() < 1e-9);
        assert!(b.mae < 1e-12);
        assert!((b.r2 - 1.0).abs() < 1e-12);

        let rows = (0..5)
            .map(|i| CalibrationRow { gamma: -0.2 + 0.1 * i as f64, speed: 1.0, dt: 30.0, dpsi: 0.07 })
            .collect();
        let fit = fit_heading_model(&CalibrationDataset { rows }).unwrap();
        assert!(fit.buckets[0].bucket.slope.abs() < 1e-12);
        assert!((fit.buckets[0].bucket.intercept - 0.07).abs() < 1e-12);
    }

    #[test]
    fn single_rudder_value_is_rejected() {
        let rows = (0..4).map(|_| CalibrationRow { gamma: 0.1, speed: 1.0, dt: 30.0, dpsi: 0.3 }).collect();
        assert!(matches!(
            fit_heading_model(&CalibrationDataset { rows }),
            Err(Error::DegenerateBucket { .. })
        ));
    }

    #[test]
    fn mirrored_rudder_mirrors_path() {
        let m = model(3.75, 0.0);
        let mut a = VehicleState::new([0.0, 0.0, 0.0], 0.0, 1.0);
        let mut b = a;
        for k in 0..30 {
            let g = [0.24, 0.12, -0.12, 0.0][k % 4];
            a = step_vehicle(&a, &m, g, 30.0, 0.0).unwrap();
            b = step_vehicle(&b, &m, -g, 30.0, 0.0).unwrap();
            assert!((a.position[0] - b.position[0]).abs() < 1e-9);
            assert!((a.position[1] + b.position[1]).abs() < 1e-9);
            assert!(a.heading.abs() <= PI);
        }
    }
}

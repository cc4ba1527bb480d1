//! Small scalar helpers shared across modules.

use core::f64::consts::PI;
use num_traits::Float;

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let two_pi = 2.0 * PI;
    let mut r = a - two_pi * Float::floor((a + PI) / two_pi);
    // floor maps to [-pi, pi); move the lower edge to the upper one
    if r <= -PI {
        r += two_pi;
    }
    if r > PI {
        r -= two_pi;
    }
    r
}

pub fn hypot2(dx: f64, dy: f64) -> f64 {
    Float::sqrt(dx * dx + dy * dy)
}

pub fn hypot3(dx: f64, dy: f64, dz: f64) -> f64 {
    Float::sqrt(dx * dx + dy * dy + dz * dz)
}

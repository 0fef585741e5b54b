//! Planar poses, angle arithmetic, the egocentric polar transform, and
//! differential-drive velocity conversions.
//!
//! All angles live in the half-open interval (−π, π]; ties at −π map to +π.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Distances below this make the line of sight numerically undefined; the
/// egocentric transform and the controller switch to degenerate branches.
pub const R_DEGENERATE: f64 = 1e-9;

/// Default axle length in metres (approximate wheelbase of a small
/// differential-drive research robot). Any positive value works.
pub const DEFAULT_AXLE: f64 = 0.108;

/// Planar position plus heading. Plain data; `heading` is kept in (−π, π]
/// by every operation that produces a `Pose`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    /// Builds a pose with the heading normalized to (−π, π].
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose { x, y, heading: normalize_angle(heading) }
    }

    /// Euclidean distance between the positions of two poses.
    pub fn distance(&self, other: &Pose) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }
}

/// Controller state triple (r, θ, δ): distance to the target, target
/// orientation w.r.t. the line of sight, robot orientation w.r.t. the line
/// of sight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgocentricPolar {
    /// Distance to the target, metres, ≥ 0.
    pub r: f64,
    /// Target orientation relative to the line of sight, (−π, π].
    pub theta: f64,
    /// Robot orientation relative to the line of sight, (−π, π].
    pub delta: f64,
}

/// Body-frame velocity command: signed linear speed (negative = reverse)
/// and angular speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    /// Linear velocity, m/s.
    pub v: f64,
    /// Angular velocity, rad/s.
    pub omega: f64,
}

/// Left/right wheel linear speeds, m/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WheelSpeeds {
    pub left: f64,
    pub right: f64,
}

impl WheelSpeeds {
    /// Clamps both wheels independently to ±`limit`.
    pub fn clamp(&self, limit: f64) -> WheelSpeeds {
        WheelSpeeds { left: self.left.clamp(-limit, limit), right: self.right.clamp(-limit, limit) }
    }
}

/// Reduces an angle to (−π, π], mapping ties at −π to +π.
///
/// The `%` remainder is exact in IEEE arithmetic and the ±2π corrections are
/// exact by Sterbenz' lemma, so boundary cases like 3π → π hold exactly.
///
/// Panics if `a` is not finite.
pub fn normalize_angle(a: f64) -> f64 {
    assert!(a.is_finite(), "normalize_angle: non-finite angle {a}");
    let two_pi = 2.0 * PI;
    let mut r = a % two_pi; // in (−2π, 2π)
    if r <= -PI {
        r += two_pi;
    } else if r > PI {
        r -= two_pi;
    }
    r
}

/// Rotates a heading by π, normalized to (−π, π].
pub fn flip_heading(h: f64) -> f64 {
    normalize_angle(h + PI)
}

/// Expresses the robot pose in egocentric polar coordinates (r, θ, δ)
/// relative to a target pose.
///
/// With LOS = atan2(Δy, Δx) the angle of the line of sight from robot to
/// target: θ = target.heading − LOS and δ = robot.heading − LOS, both
/// normalized. Below [`R_DEGENERATE`] the LOS is undefined; θ is defined as 0
/// and δ as the heading difference.
pub fn to_egocentric_polar(robot: &Pose, target: &Pose) -> EgocentricPolar {
    let dx = target.x - robot.x;
    let dy = target.y - robot.y;
    let r = dx.hypot(dy);
    if r < R_DEGENERATE {
        return EgocentricPolar {
            r,
            theta: 0.0,
            delta: normalize_angle(robot.heading - target.heading),
        };
    }
    let los = dy.atan2(dx);
    EgocentricPolar {
        r,
        theta: normalize_angle(target.heading - los),
        delta: normalize_angle(robot.heading - los),
    }
}

/// Converts a body twist to wheel speeds: left = v − ω·axle/2,
/// right = v + ω·axle/2. Exact inverse of [`wheels_to_twist`].
///
/// Panics if `axle` ≤ 0.
pub fn twist_to_wheels(t: &Twist, axle: f64) -> WheelSpeeds {
    assert!(axle > 0.0, "twist_to_wheels: axle must be positive, got {axle}");
    let half = axle / 2.0;
    WheelSpeeds { left: t.v - t.omega * half, right: t.v + t.omega * half }
}

/// Converts wheel speeds to a body twist: v = (l + r)/2, ω = (r − l)/axle.
///
/// Panics if `axle` ≤ 0.
pub fn wheels_to_twist(w: &WheelSpeeds, axle: f64) -> Twist {
    assert!(axle > 0.0, "wheels_to_twist: axle must be positive, got {axle}");
    Twist { v: (w.left + w.right) / 2.0, omega: (w.right - w.left) / axle }
}

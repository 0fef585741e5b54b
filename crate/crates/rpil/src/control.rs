//! Omniscient smooth pose controller.
//!
//! Maps (robot pose, goal pose) to a body twist by steering the egocentric
//! polar state (r, θ, δ) to the origin: a reference heading δ̂ = arctan(−k1·θ)
//! shapes the approach, a curvature law turns the heading error into path
//! curvature, and the linear speed is shaped so sharp turns slow the robot
//! down and the final approach decelerates proportionally to the remaining
//! distance. Driving in reverse is realized by flipping both headings by π
//! and negating the linear velocity.

use crate::geom::{
    flip_heading, normalize_angle, to_egocentric_polar, EgocentricPolar, Pose, Twist, R_DEGENERATE,
};
use serde::{Deserialize, Serialize};

/// Controller gains and speed shaping parameters.
///
/// `k1` shapes the reference heading, `k2` the heading-error gain, `k3` the
/// final-approach deceleration (v ≤ k3·r), `beta`/`lambda` the curvature
/// speed shaping, `v_max` the cruise speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub beta: f64,
    pub lambda: f64,
    pub v_max: f64,
}

impl Default for ControlParams {
    fn default() -> Self {
        // cruise speed sized so the worst demo-circle pose docks with margin
        // inside the 20 s run budget (the gains fix the path shape; only the
        // time scale is free)
        ControlParams { k1: 1.0, k2: 3.0, k3: 2.0, beta: 0.4, lambda: 2.0, v_max: 0.55 }
    }
}

impl ControlParams {
    /// Checks the admissible ranges: k1, k2, k3, beta > 0; lambda > 1;
    /// v_max > 0.
    // negated comparisons so NaN fails validation too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), String> {
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.k3 > 0.0 && self.beta > 0.0) {
            return Err("control gains k1, k2, k3, beta must be positive".into());
        }
        if !(self.lambda > 1.0) {
            return Err("lambda must exceed 1".into());
        }
        if !(self.v_max > 0.0) {
            return Err("v_max must be positive".into());
        }
        Ok(())
    }
}

/// Reference orientation δ̂ = arctan(−k1·θ); always strictly inside
/// (−π/2, π/2).
pub fn reference_heading(theta: f64, k1: f64) -> f64 {
    (-k1 * theta).atan()
}

/// Path curvature κ = −(1/r)·[k2·(δ − δ̂) + (1 + k1/(1 + (k1·θ)²))·sin θ].
///
/// The heading error δ − δ̂ is re-normalized to (−π, π] so κ has no 2π jumps.
///
/// Panics if `state.r` ≤ 0 (singular; callers must branch to the
/// near-goal rule before r reaches 0).
pub fn curvature(state: &EgocentricPolar, p: &ControlParams) -> f64 {
    assert!(state.r > 0.0, "curvature: singular at r = {}", state.r);
    let delta_err = normalize_angle(state.delta - reference_heading(state.theta, p.k1));
    let k1t = p.k1 * state.theta;
    let shaping = 1.0 + p.k1 / (1.0 + k1t * k1t);
    -(p.k2 * delta_err + shaping * state.theta.sin()) / state.r
}

/// Curvature-shaped linear speed v = v_max / (1 + β·|κ|^λ); in (0, v_max].
pub fn linear_velocity(kappa: f64, p: &ControlParams) -> f64 {
    p.v_max / (1.0 + p.beta * kappa.abs().powf(p.lambda))
}

/// Final-approach limit v' = min(v, k3·r).
pub fn limit_near_goal(v: f64, r: f64, k3: f64) -> f64 {
    v.min(k3 * r)
}

/// Rotates both headings by π (positions unchanged). Involution.
pub fn flip_for_reverse(robot: &Pose, goal: &Pose) -> (Pose, Pose) {
    (
        Pose { heading: flip_heading(robot.heading), ..*robot },
        Pose { heading: flip_heading(goal.heading), ..*goal },
    )
}

/// One controller evaluation: egocentric state → curvature → shaped speed →
/// twist with ω = κ·v'. With `reverse` the state is computed in the flipped
/// frame and the linear velocity negated. Below [`R_DEGENERATE`] the robot
/// turns in place toward the goal heading with gain k2.
pub fn control_step(robot: &Pose, goal: &Pose, p: &ControlParams, reverse: bool) -> Twist {
    let (r, g);
    let (robot, goal) = if reverse {
        (r, g) = flip_for_reverse(robot, goal);
        (&r, &g)
    } else {
        (robot, goal)
    };
    let state = to_egocentric_polar(robot, goal);
    if state.r < R_DEGENERATE {
        // the flip offsets cancel in the difference, so reverse needs no case
        let omega = p.k2 * normalize_angle(goal.heading - robot.heading);
        return Twist { v: 0.0, omega };
    }
    let kappa = curvature(&state, p);
    let v = limit_near_goal(linear_velocity(kappa, p), state.r, p.k3);
    Twist { v: if reverse { -v } else { v }, omega: kappa * v }
}

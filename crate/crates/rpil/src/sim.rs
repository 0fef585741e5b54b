//! Minimal planar world: horseshoe object geometry, ray-cast 360°
//! distance+colour scanner, differential-drive integration, collision
//! handling, and the run loop.
//!
//! The world is a set of coloured line segments. The robot is a disc; a step
//! that would bring the disc into contact with a segment is rejected (the
//! robot stays put for that step and the run is flagged `collided`), so the
//! robot can get stuck on the object but never penetrates it.

use crate::dataset::{to_stored, Sample};
use crate::geom::{normalize_angle, wheels_to_twist, Pose, WheelSpeeds};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// RGB colour, each channel in [0, 1].
pub type Color = [f64; 3];

/// Background colour returned for rays that hit nothing (black).
pub const BACKGROUND: Color = [0.0, 0.0, 0.0];

/// Default number of scanner rays (2° angular resolution).
pub const SCANNER_RAYS: usize = 180;

/// Default scanner range in metres; spawns may lie slightly beyond it.
pub const SCANNER_RANGE: f64 = 1.8;

/// Robot disc radius in metres.
pub const ROBOT_RADIUS: f64 = 0.085;

// ---------- Horseshoe geometry ----------

/// Back wall length (y extent), metres.
pub const BACK_WALL_LENGTH: f64 = 0.40;
/// Arm length beyond the back wall's front face, metres.
pub const ARM_LENGTH: f64 = 0.30;
/// Thickness of every wall, metres.
pub const WALL_THICKNESS: f64 = 0.04;
/// Clear gap between the inner faces of the two arms, metres.
pub const INNER_GAP: f64 = 0.22;

/// x of the back wall's outer (−x) face; the outline is centered at the
/// origin, so the total x extent is `WALL_THICKNESS + ARM_LENGTH`.
pub const X_BACK_OUTER: f64 = -(WALL_THICKNESS + ARM_LENGTH) / 2.0;
/// x of the back wall's inner (+x) face.
pub const X_BACK_INNER: f64 = X_BACK_OUTER + WALL_THICKNESS;
/// x of the arm tips.
pub const X_ARM_TIP: f64 = X_BACK_INNER + ARM_LENGTH;

/// One wall face segment with its colour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredSegment {
    pub p1: [f64; 2],
    pub p2: [f64; 2],
    pub color: Color,
}

/// Object colouring scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldVariant {
    Monochromatic,
    Polychromatic,
}

/// Immutable world description: wall segments plus scanner parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub segments: Vec<ColoredSegment>,
    pub variant: WorldVariant,
    pub background_color: Color,
    pub scanner_range: f64,
    pub scanner_rays: usize,
}

/// One 360° scanner reading: per ray a distance in (0, scanner_range] and
/// the colour of the surface hit (background colour at range).
#[derive(Debug, Clone, PartialEq)]
pub struct ScanFrame {
    pub distances: Vec<f64>,
    pub colors: Vec<Color>,
}

/// Distinct colours for the ten faces of the horseshoe outline; the three
/// collinear strips of the front plane count as one face.
const PALETTE: [Color; 10] = [
    [0.894, 0.102, 0.110],
    [0.216, 0.494, 0.722],
    [0.302, 0.686, 0.290],
    [0.596, 0.306, 0.639],
    [1.000, 0.498, 0.000],
    [0.800, 0.800, 0.133],
    [0.651, 0.337, 0.157],
    [0.969, 0.506, 0.749],
    [0.600, 0.600, 0.600],
    [0.000, 0.749, 0.749],
];

const MONO_COLOR: Color = [1.0, 0.0, 0.0];

/// Builds the horseshoe-shaped object centered at the origin, opening toward
/// +x: a back wall and two parallel arms, drawn as a closed polyline whose
/// twelve segments form ten faces (the front plane contributes three
/// collinear strips sharing one face colour).
pub fn build_horseshoe(variant: WorldVariant) -> WorldSpec {
    let xo = X_BACK_OUTER;
    let xi = X_BACK_INNER;
    let xt = X_ARM_TIP;
    let yb = BACK_WALL_LENGTH / 2.0; // back wall outer corner
    let yg = INNER_GAP / 2.0; // arm inner face
    let ya = yg + WALL_THICKNESS; // arm outer face

    // (face index, p1, p2); faces: 0 back outer, 1 back top edge, 2 front
    // plane, 3 top arm outer, 4 top arm tip, 5 top arm inner, 6 bottom arm
    // inner, 7 bottom arm tip, 8 bottom arm outer, 9 back bottom edge.
    let outline: [(usize, [f64; 2], [f64; 2]); 12] = [
        (0, [xo, -yb], [xo, yb]),
        (1, [xo, yb], [xi, yb]),
        (2, [xi, yb], [xi, ya]),
        (3, [xi, ya], [xt, ya]),
        (4, [xt, ya], [xt, yg]),
        (5, [xt, yg], [xi, yg]),
        (2, [xi, yg], [xi, -yg]),
        (6, [xi, -yg], [xt, -yg]),
        (7, [xt, -yg], [xt, -ya]),
        (8, [xt, -ya], [xi, -ya]),
        (2, [xi, -ya], [xi, -yb]),
        (9, [xi, -yb], [xo, -yb]),
    ];
    let segments = outline
        .iter()
        .map(|&(face, p1, p2)| ColoredSegment {
            p1,
            p2,
            color: match variant {
                WorldVariant::Monochromatic => MONO_COLOR,
                WorldVariant::Polychromatic => PALETTE[face],
            },
        })
        .collect();
    WorldSpec {
        segments,
        variant,
        background_color: BACKGROUND,
        scanner_range: SCANNER_RANGE,
        scanner_rays: SCANNER_RAYS,
    }
}

/// An empty world (no segments) with default scanner parameters.
pub fn empty_world() -> WorldSpec {
    WorldSpec {
        segments: Vec::new(),
        variant: WorldVariant::Monochromatic,
        background_color: BACKGROUND,
        scanner_range: SCANNER_RANGE,
        scanner_rays: SCANNER_RAYS,
    }
}

/// Distance from point `p` to segment `ab`.
fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 { ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (a[0] + t * ab[0] - p[0]).hypot(a[1] + t * ab[1] - p[1])
}

/// True if a robot disc of radius `radius` centered at (x, y) touches any
/// wall segment.
pub fn collides(world: &WorldSpec, x: f64, y: f64, radius: f64) -> bool {
    world.segments.iter().any(|s| point_segment_distance([x, y], s.p1, s.p2) < radius)
}

/// Casts all scanner rays from the robot center. Ray i leaves at world angle
/// `pose.heading + 2π·i/scanner_rays`; each ray reports the nearest segment
/// intersection (exact ray–segment solve) capped at `scanner_range`, with
/// the hit segment's colour, or the background colour at the cap.
///
/// Precondition: the pose is not embedded in a wall (distances are then
/// strictly positive).
pub fn raycast_scan(pose: &Pose, world: &WorldSpec) -> ScanFrame {
    let n = world.scanner_rays;
    let mut distances = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    let o = [pose.x, pose.y];
    for i in 0..n {
        let angle = pose.heading + 2.0 * PI * (i as f64) / (n as f64);
        let d = [angle.cos(), angle.sin()];
        let mut best_t = world.scanner_range;
        let mut best_color = world.background_color;
        for seg in &world.segments {
            let e = [seg.p2[0] - seg.p1[0], seg.p2[1] - seg.p1[1]];
            let det = d[0] * e[1] - d[1] * e[0];
            if det == 0.0 {
                continue; // parallel ray sees an infinitely thin wall edge-on
            }
            let w = [seg.p1[0] - o[0], seg.p1[1] - o[1]];
            let t = (w[0] * e[1] - w[1] * e[0]) / det;
            let s = (w[0] * d[1] - w[1] * d[0]) / det;
            if t > 0.0 && (0.0..=1.0).contains(&s) && t < best_t {
                best_t = t;
                best_color = seg.color;
            }
        }
        distances.push(best_t);
        colors.push(best_color);
    }
    ScanFrame { distances, colors }
}

/// Advances a pose by wheel speeds over `dt` using the exact unicycle arc:
/// straight line when |ω| < 1e−9 rad/s, otherwise a circular arc of radius
/// v/ω about the instantaneous center. The heading is renormalized.
pub fn integrate(pose: &Pose, w: &WheelSpeeds, axle: f64, dt: f64) -> Pose {
    assert!(dt > 0.0, "integrate: dt must be positive, got {dt}");
    let t = wheels_to_twist(w, axle);
    if t.omega.abs() < 1e-9 {
        return Pose {
            x: pose.x + t.v * dt * pose.heading.cos(),
            y: pose.y + t.v * dt * pose.heading.sin(),
            heading: pose.heading,
        };
    }
    let radius = t.v / t.omega;
    let h1 = pose.heading + t.omega * dt;
    Pose {
        x: pose.x + radius * (h1.sin() - pose.heading.sin()),
        y: pose.y - radius * (h1.cos() - pose.heading.cos()),
        heading: normalize_angle(h1),
    }
}

/// Run termination parameters and robot constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Simulation step, seconds.
    pub dt: f64,
    /// Hard cap on integration steps per run.
    pub max_steps: usize,
    /// Extra recorded steps after the goal is first reached.
    pub settle_steps: usize,
    /// Goal position tolerance, metres.
    pub pos_tol: f64,
    /// Goal heading tolerance, radians.
    pub ang_tol: f64,
    pub robot_radius: f64,
    pub axle: f64,
    /// Per-wheel speed limit applied to every command.
    pub v_wheel_max: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dt: 0.1,
            max_steps: 200,
            settle_steps: 10,
            pos_tol: 0.001,
            ang_tol: 0.5f64.to_radians(),
            robot_radius: ROBOT_RADIUS,
            axle: crate::geom::DEFAULT_AXLE,
            // matches the default controller cruise speed so the per-wheel
            // clamp stays inactive on straight segments
            v_wheel_max: 0.55,
        }
    }
}

impl RunConfig {
    // negated comparisons so NaN fails validation too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt > 0.0) {
            return Err("dt must be positive".into());
        }
        if self.max_steps < self.settle_steps {
            return Err("max_steps must be at least settle_steps".into());
        }
        if !(self.pos_tol > 0.0 && self.ang_tol > 0.0) {
            return Err("goal tolerances must be positive".into());
        }
        if !(self.robot_radius > 0.0 && self.axle > 0.0 && self.v_wheel_max > 0.0) {
            return Err("robot_radius, axle, v_wheel_max must be positive".into());
        }
        Ok(())
    }
}

/// True iff the pose is within `pos_tol` of the goal position and within
/// `ang_tol` of the goal heading.
pub fn at_goal(pose: &Pose, goal: &Pose, cfg: &RunConfig) -> bool {
    pose.distance(goal) < cfg.pos_tol
        && normalize_angle(pose.heading - goal.heading).abs() < cfg.ang_tol
}

/// Anything that can drive the robot: maps (pose, scan, goal) to wheel
/// speeds. The omniscient controller reads the pose; learned controllers
/// read the scan (and the goal when goal-conditioned).
pub trait Controller {
    fn command(&mut self, pose: &Pose, scan: &ScanFrame, goal: &Pose) -> WheelSpeeds;
}

impl<F: FnMut(&Pose, &ScanFrame, &Pose) -> WheelSpeeds> Controller for F {
    fn command(&mut self, pose: &Pose, scan: &ScanFrame, goal: &Pose) -> WheelSpeeds {
        self(pose, scan, goal)
    }
}

/// The expert: wraps the smooth pose controller, with the reverse decision
/// fixed for the whole run.
pub struct Omniscient {
    pub params: crate::control::ControlParams,
    pub axle: f64,
    pub reverse: bool,
}

impl Controller for Omniscient {
    fn command(&mut self, pose: &Pose, _scan: &ScanFrame, goal: &Pose) -> WheelSpeeds {
        let t = crate::control::control_step(pose, goal, &self.params, self.reverse);
        crate::geom::twist_to_wheels(&t, self.axle)
    }
}

/// One simulation trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub run_id: u32,
    pub samples: Vec<Sample>,
    pub reached_goal: bool,
    pub collided: bool,
    /// Whether the run was driven in reverse gear; set by the dataset layer
    /// (the decision belongs to spawn sampling), false for plain sim runs.
    pub reverse: bool,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("controller produced a non-finite wheel command at step {step}: ({left}, {right})")]
    NonFiniteCommand { step: usize, left: f64, right: f64 },
    #[error("start pose ({x}, {y}) collides with the world")]
    StartCollides { x: f64, y: f64 },
}

/// Rolls out one run: per step scan → controller → wheel clamp → record →
/// collision-checked integrate. Terminates `settle_steps` steps after the
/// goal tolerance first holds (the controller keeps running through the
/// settle window) or at `max_steps` integrations, whichever comes first, so
/// a run holds at most `max_steps + 1` samples.
///
/// Recorded quantities (poses, scans, commands) are rounded to single
/// precision, matching the dataset file format exactly; the command driving
/// the integration is the recorded one, so stored targets are recomputable
/// bit-exactly from stored poses.
pub fn simulate_run(
    start: &Pose,
    goal: &Pose,
    controller: &mut dyn Controller,
    world: &WorldSpec,
    cfg: &RunConfig,
    run_id: u32,
) -> Result<Run, SimError> {
    if collides(world, start.x, start.y, cfg.robot_radius) {
        return Err(SimError::StartCollides { x: start.x, y: start.y });
    }
    let goal_rec = store_pose(goal);
    let mut pose = *start;
    let mut samples = Vec::new();
    let mut reached_goal = false;
    let mut collided = false;
    let mut settle_remaining: Option<usize> = None;

    for step in 0..=cfg.max_steps {
        let pose_rec = store_pose(&pose);
        let scan = store_scan(raycast_scan(&pose_rec, world));
        let wheels = controller.command(&pose_rec, &scan, &goal_rec);
        if !(wheels.left.is_finite() && wheels.right.is_finite()) {
            return Err(SimError::NonFiniteCommand { step, left: wheels.left, right: wheels.right });
        }
        let cmd = store_wheels(wheels.clamp(cfg.v_wheel_max));
        samples.push(Sample {
            scan,
            goal_pose: goal_rec,
            target_wheels: cmd,
            robot_pose: pose_rec,
            run_id,
            step: step as u32,
        });

        if settle_remaining.is_none() && at_goal(&pose, goal, cfg) {
            reached_goal = true;
            settle_remaining = Some(cfg.settle_steps);
        }
        match settle_remaining.as_mut() {
            Some(0) => break,
            Some(n) => *n -= 1,
            None => {}
        }
        if step == cfg.max_steps {
            break;
        }

        let next = integrate(&pose, &cmd, cfg.axle, cfg.dt);
        if collides(world, next.x, next.y, cfg.robot_radius) {
            collided = true; // stay put for this step, velocities dropped
        } else {
            pose = next;
        }
    }

    Ok(Run { run_id, samples, reached_goal, collided, reverse: false })
}

/// Pose rounded to single precision for recording.
pub(crate) fn store_pose(p: &Pose) -> Pose {
    Pose { x: to_stored(p.x), y: to_stored(p.y), heading: to_stored(p.heading) }
}

pub(crate) fn store_wheels(w: WheelSpeeds) -> WheelSpeeds {
    WheelSpeeds { left: to_stored(w.left), right: to_stored(w.right) }
}

fn store_scan(mut s: ScanFrame) -> ScanFrame {
    for d in &mut s.distances {
        *d = to_stored(*d);
    }
    for c in &mut s.colors {
        *c = [to_stored(c[0]), to_stored(c[1]), to_stored(c[2])];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControlParams;
    use proptest::prelude::*;

    #[test]
    fn horseshoe_monochromatic_is_uniform() {
        let w = build_horseshoe(WorldVariant::Monochromatic);
        assert_eq!(w.segments.len(), 12);
        assert!(w.segments.iter().all(|s| s.color == MONO_COLOR));
    }

    #[test]
    fn horseshoe_polychromatic_faces_distinct() {
        let w = build_horseshoe(WorldVariant::Polychromatic);
        let mut face_colors: Vec<Color> = w.segments.iter().map(|s| s.color).collect();
        face_colors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        face_colors.dedup();
        // twelve segments, ten distinct face colours (front plane = 3 strips)
        assert_eq!(face_colors.len(), 10);
    }

    #[test]
    fn horseshoe_symmetric_about_x_axis() {
        let w = build_horseshoe(WorldVariant::Monochromatic);
        for seg in &w.segments {
            let mirrored_exists = w.segments.iter().any(|o| {
                (o.p1 == [seg.p1[0], -seg.p1[1]] && o.p2 == [seg.p2[0], -seg.p2[1]])
                    || (o.p1 == [seg.p2[0], -seg.p2[1]] && o.p2 == [seg.p1[0], -seg.p1[1]])
            });
            assert!(mirrored_exists, "no mirror for segment {seg:?}");
        }
    }

    #[test]
    fn raycast_empty_world() {
        let w = empty_world();
        let scan = raycast_scan(&Pose::new(0.3, -0.2, 1.0), &w);
        assert_eq!(scan.distances.len(), w.scanner_rays);
        assert!(scan.distances.iter().all(|&d| d == w.scanner_range));
        assert!(scan.colors.iter().all(|&c| c == w.background_color));
    }

    #[test]
    fn raycast_perpendicular_wall() {
        let mut w = empty_world();
        let color = [0.1, 0.2, 0.3];
        w.segments.push(ColoredSegment { p1: [0.5, -0.1], p2: [0.5, 0.1], color });
        let scan = raycast_scan(&Pose::new(0.0, 0.0, 0.0), &w);
        assert!((scan.distances[0] - 0.5).abs() < 1e-15);
        assert_eq!(scan.colors[0], color);
        // ray 90 (behind) misses
        assert_eq!(scan.distances[90], w.scanner_range);
    }

    #[test]
    fn raycast_heading_rotation_shifts_scan() {
        let world = build_horseshoe(WorldVariant::Polychromatic);
        let p = Pose::new(0.6, 0.15, 0.3);
        let base = raycast_scan(&p, &world);
        let step = 2.0 * PI / world.scanner_rays as f64;
        for k in [1usize, 7, 90, 179] {
            let rotated = raycast_scan(&Pose::new(p.x, p.y, p.heading + step * k as f64), &world);
            for i in 0..world.scanner_rays {
                let j = (i + k) % world.scanner_rays;
                assert!(
                    (rotated.distances[i] - base.distances[j]).abs() < 1e-9,
                    "k={k} ray {i}"
                );
                assert_eq!(rotated.colors[i], base.colors[j]);
            }
        }
    }

    #[test]
    fn integrate_examples() {
        let p = integrate(&Pose::new(0.0, 0.0, 0.0), &WheelSpeeds { left: 0.1, right: 0.1 }, 0.108, 1.0);
        assert!((p.x - 0.1).abs() < 1e-15 && p.y == 0.0 && p.heading == 0.0);

        // pure rotation: ω = π/2 via wheels ±π/2·axle/2
        let axle = 0.108;
        let w = crate::geom::twist_to_wheels(&crate::geom::Twist { v: 0.0, omega: PI / 2.0 }, axle);
        let p = integrate(&Pose::new(0.0, 0.0, 0.0), &w, axle, 1.0);
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12);
        assert!((p.heading - PI / 2.0).abs() < 1e-12);

        // quarter circle of radius v/ω = 0.5
        let w = crate::geom::twist_to_wheels(
            &crate::geom::Twist { v: PI / 2.0 * 0.5, omega: PI / 2.0 },
            axle,
        );
        let p = integrate(&Pose::new(0.0, 0.0, 0.0), &w, axle, 1.0);
        assert!((p.x - 0.5).abs() < 1e-12, "x = {}", p.x);
        assert!((p.y - 0.5).abs() < 1e-12, "y = {}", p.y);
        assert!((p.heading - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn at_goal_uses_millimetre_and_half_degree_defaults() {
        let cfg = RunConfig::default();
        let goal = Pose::new(0.25, 0.0, PI);
        assert!(at_goal(&goal, &goal, &cfg));
        let near = Pose::new(0.25, 0.0009, PI - 0.4f64.to_radians());
        assert!(at_goal(&near, &goal, &cfg));
        let heading_off = Pose::new(0.25, 0.0009, PI - 0.6f64.to_radians());
        assert!(!at_goal(&heading_off, &goal, &cfg));
        let pos_off = Pose::new(0.25 - 0.0011, 0.0, PI);
        assert!(!at_goal(&pos_off, &goal, &cfg));
    }

    #[test]
    fn run_starting_at_goal_settles() {
        let world = build_horseshoe(WorldVariant::Monochromatic);
        let cfg = RunConfig::default();
        let goal = Pose::new(0.25, 0.0, PI);
        let mut ctrl = Omniscient { params: ControlParams::default(), axle: cfg.axle, reverse: false };
        let run = simulate_run(&goal, &goal, &mut ctrl, &world, &cfg, 0).unwrap();
        assert_eq!(run.samples.len(), cfg.settle_steps + 1);
        assert!(run.reached_goal);
        assert!(!run.collided);
    }

    #[test]
    fn omniscient_reaches_fixed_goal() {
        let world = build_horseshoe(WorldVariant::Monochromatic);
        let cfg = RunConfig::default();
        let goal = Pose::new(0.25, 0.0, PI);
        let mut ctrl = Omniscient { params: ControlParams::default(), axle: cfg.axle, reverse: false };
        let run = simulate_run(&Pose::new(-1.5, 0.0, 0.0), &goal, &mut ctrl, &world, &cfg, 0);
        let run = run.unwrap();
        assert!(run.reached_goal, "run did not converge in {} samples", run.samples.len());
        assert!(run.samples.len() <= cfg.max_steps + 1);
    }

    #[test]
    fn wall_rammer_collides_without_penetrating() {
        let world = build_horseshoe(WorldVariant::Monochromatic);
        let cfg = RunConfig::default();
        let goal = Pose::new(-1.0, 0.0, PI); // beyond the back wall
        let mut rammer = |_: &Pose, _: &ScanFrame, _: &Pose| WheelSpeeds { left: 0.3, right: 0.3 };
        let start = Pose::new(-0.5, 0.0, 0.0); // facing the back wall
        let run = simulate_run(&start, &goal, &mut rammer, &world, &cfg, 0).unwrap();
        assert!(run.collided);
        assert!(!run.reached_goal);
        assert_eq!(run.samples.len(), cfg.max_steps + 1);
        for s in &run.samples {
            for seg in &world.segments {
                let d = point_segment_distance([s.robot_pose.x, s.robot_pose.y], seg.p1, seg.p2);
                assert!(d >= cfg.robot_radius - 1e-9, "penetration: {d}");
            }
        }
    }

    #[test]
    fn nonfinite_controller_aborts() {
        let world = empty_world();
        let cfg = RunConfig::default();
        let mut bad = |_: &Pose, _: &ScanFrame, _: &Pose| WheelSpeeds { left: f64::NAN, right: 0.0 };
        let err = simulate_run(
            &Pose::new(0.0, 0.0, 0.0),
            &Pose::new(1.0, 0.0, 0.0),
            &mut bad,
            &world,
            &cfg,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, SimError::NonFiniteCommand { step: 0, .. }));
    }

    proptest! {
        #[test]
        fn integrate_composes_half_steps(
            x in -1.0f64..1.0, y in -1.0f64..1.0, h in -3.1f64..3.1,
            left in -0.3f64..0.3, right in -0.3f64..0.3,
        ) {
            let p = Pose::new(x, y, h);
            let w = WheelSpeeds { left, right };
            let axle = 0.108;
            let whole = integrate(&p, &w, axle, 0.1);
            let halves = integrate(&integrate(&p, &w, axle, 0.05), &w, axle, 0.05);
            prop_assert!((whole.x - halves.x).abs() < 1e-12);
            prop_assert!((whole.y - halves.y).abs() < 1e-12);
            prop_assert!(normalize_angle(whole.heading - halves.heading).abs() < 1e-12);
        }
    }
}

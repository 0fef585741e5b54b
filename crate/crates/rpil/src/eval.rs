//! Closed-loop evaluation of learned controllers, regression metrics against
//! the omniscient targets, and CSV exports of the rollout data.

use std::f64::consts::PI;
use std::io;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

use crate::control::ControlParams;
use crate::dataset::{Dataset, Split};
use crate::geom::{normalize_angle, Pose};
use crate::nn::{design_matrices, Mode, Network};
use crate::sim::{at_goal, collides, simulate_run, Omniscient, Run, RunConfig, SimError, WorldSpec};

/// Half-width of the heatmap extent: the grid spans [−2.5, 2.5]².
pub const HEATMAP_EXTENT: f64 = 2.5;
/// Heatmap cell edge, metres.
pub const HEATMAP_CELL: f64 = 0.05;
/// Cells per heatmap axis.
pub const HEATMAP_CELLS: usize = 100;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("undefined R²: the target values are all identical")]
    UndefinedR2,
    #[error("R² needs at least 2 values, got {0}")]
    TooFewValues(usize),
    #[error("split has no samples")]
    EmptySplit,
    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

/// Coefficient of determination 1 − Σ(t − p)²/Σ(t − mean(t))².
///
/// A constant target leaves the denominator zero, which is reported as a
/// distinct error rather than an infinity.
pub fn r2_score(pred: &[f64], target: &[f64]) -> Result<f64, EvalError> {
    assert_eq!(pred.len(), target.len(), "r2_score: length mismatch");
    if target.len() < 2 {
        return Err(EvalError::TooFewValues(target.len()));
    }
    if target.iter().all(|&t| t == target[0]) {
        return Err(EvalError::UndefinedR2);
    }
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    let ss_res: f64 = pred.iter().zip(target).map(|(p, t)| (t - p) * (t - p)).sum();
    let ss_tot: f64 = target.iter().map(|t| (t - mean) * (t - mean)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// The four regression scores of a network against the recorded expert
/// commands: per wheel, and on the body twist recovered from the wheels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionReport {
    pub r2_left: f64,
    pub r2_right: f64,
    pub r2_linear: f64,
    pub r2_angular: f64,
}

/// Eval-mode predictions over a whole design matrix, batched.
fn predict(net: &Network<f32>, x: &ndarray::Array3<f32>, goal: Option<&Array2<f32>>) -> Array2<f32> {
    let n = x.dim().0;
    let mut pred = Array2::<f32>::zeros((n, 2));
    let batch = 1024;
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        let xb = x.slice(ndarray::s![start..end, .., ..]).to_owned();
        let gb = goal.map(|g| g.slice(ndarray::s![start..end, ..]).to_owned());
        let out = net.forward(&xb, gb.as_ref(), Mode::Eval, None);
        pred.slice_mut(ndarray::s![start..end, ..]).assign(&out);
        start = end;
    }
    pred
}

/// Runs an eval-mode forward pass on every sample of the split and scores the
/// predictions: R² per wheel, and on (v, ω) where v = (l + r)/2 and
/// ω = (r − l)/axle.
pub fn evaluate_regression(
    net: &Network<f32>,
    ds: &Dataset,
    split: Split,
    axle: f64,
) -> Result<RegressionReport, EvalError> {
    let (x, goal, y) = design_matrices(ds, split);
    if x.dim().0 == 0 {
        return Err(EvalError::EmptySplit);
    }
    let goal = net.spec.variant.goal_input().then_some(&goal);
    let pred = predict(net, &x, goal);

    let n = y.dim().0;
    let column = |m: &Array2<f32>, c: usize| -> Vec<f64> {
        (0..n).map(|i| m[[i, c]] as f64).collect()
    };
    let twist = |m: &Array2<f32>| -> (Vec<f64>, Vec<f64>) {
        (0..n)
            .map(|i| {
                let (l, r) = (m[[i, 0]] as f64, m[[i, 1]] as f64);
                ((l + r) / 2.0, (r - l) / axle)
            })
            .unzip()
    };
    let (v_pred, w_pred) = twist(&pred);
    let (v_tgt, w_tgt) = twist(&y);
    Ok(RegressionReport {
        r2_left: r2_score(&column(&pred, 0), &column(&y, 0))?,
        r2_right: r2_score(&column(&pred, 1), &column(&y, 1))?,
        r2_linear: r2_score(&v_pred, &v_tgt)?,
        r2_angular: r2_score(&w_pred, &w_tgt)?,
    })
}

/// `n` poses evenly spaced on a circle of `radius` around the goal position,
/// each heading straight at the goal. The standard closed-loop test set is
/// `demo_circle_poses(9, 1.5, &task1_goal())`.
pub fn demo_circle_poses(n: usize, radius: f64, goal: &Pose) -> Vec<Pose> {
    (0..n)
        .map(|k| {
            let phi = 2.0 * PI * k as f64 / n as f64;
            let (x, y) = (goal.x + radius * phi.cos(), goal.y + radius * phi.sin());
            Pose::new(x, y, normalize_angle(phi + PI))
        })
        .collect()
}

/// One closed-loop run distilled for reporting: the pose series and the
/// distance-to-goal metrics derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutRun {
    pub trajectory: Vec<Pose>,
    /// Euclidean distance to the goal position per step, metres.
    pub distance: Vec<f64>,
    /// Absolute normalized heading error to the goal heading per step.
    pub heading_error: Vec<f64>,
    pub reached_goal: bool,
    pub collided: bool,
    /// First step index at which the goal tolerance held.
    pub steps_to_goal: Option<u32>,
}

/// Position occupancy over all runs: 5 cm cells over [−2.5, 2.5]², positions
/// outside the extent counted in the nearest edge cell so no sample is lost.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// Counts indexed `[ix, iy]` with x, y ascending.
    pub counts: Array2<u32>,
}

impl Heatmap {
    fn new() -> Heatmap {
        Heatmap { counts: Array2::zeros((HEATMAP_CELLS, HEATMAP_CELLS)) }
    }

    fn cell(v: f64) -> usize {
        let i = ((v + HEATMAP_EXTENT) / HEATMAP_CELL).floor();
        (i.max(0.0) as usize).min(HEATMAP_CELLS - 1)
    }

    fn record(&mut self, x: f64, y: f64) {
        self.counts[[Self::cell(x), Self::cell(y)]] += 1;
    }

    /// Center coordinate of cell index `i` along either axis.
    pub fn center(i: usize) -> f64 {
        -HEATMAP_EXTENT + HEATMAP_CELL * (i as f64 + 0.5)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// Everything the rollout plots need: per-run series plus the aggregates
/// (final poses, occupancy grid, time-to-goal histogram).
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutReport {
    pub goal: Pose,
    /// Simulation step used by the runs, for the time column of exports.
    pub dt: f64,
    pub runs: Vec<RolloutRun>,
    /// Final pose of each run as (x, y, heading, reached_goal).
    pub final_positions: Vec<(f64, f64, f64, bool)>,
    pub heatmap: Heatmap,
    /// (steps, run count) pairs over the runs that reached the goal, steps
    /// ascending.
    pub time_to_goal: Vec<(u32, u32)>,
}

fn assemble(runs: Vec<Run>, goal: &Pose, cfg: &RunConfig) -> RolloutReport {
    let mut report = RolloutReport {
        goal: *goal,
        dt: cfg.dt,
        runs: Vec::with_capacity(runs.len()),
        final_positions: Vec::with_capacity(runs.len()),
        heatmap: Heatmap::new(),
        time_to_goal: Vec::new(),
    };
    let mut hist = std::collections::BTreeMap::<u32, u32>::new();
    for run in runs {
        let trajectory: Vec<Pose> = run.samples.iter().map(|s| s.robot_pose).collect();
        let distance = trajectory.iter().map(|p| p.distance(goal)).collect();
        let heading_error = trajectory
            .iter()
            .map(|p| normalize_angle(p.heading - goal.heading).abs())
            .collect();
        let steps_to_goal = trajectory
            .iter()
            .position(|p| at_goal(p, goal, cfg))
            .map(|i| i as u32);
        for p in &trajectory {
            report.heatmap.record(p.x, p.y);
        }
        let last = *trajectory.last().expect("a run records at least one sample");
        report.final_positions.push((last.x, last.y, last.heading, run.reached_goal));
        if run.reached_goal {
            if let Some(s) = steps_to_goal {
                *hist.entry(s).or_insert(0) += 1;
            }
        }
        report.runs.push(RolloutRun {
            trajectory,
            distance,
            heading_error,
            reached_goal: run.reached_goal,
            collided: run.collided,
            steps_to_goal,
        });
    }
    report.time_to_goal = hist.into_iter().collect();
    report
}

fn rollout_runs<C, M>(
    make: M,
    world: &WorldSpec,
    starts: &[Pose],
    goal: &Pose,
    cfg: &RunConfig,
) -> Result<RolloutReport, EvalError>
where
    M: Fn() -> C + Sync,
    C: crate::sim::Controller,
{
    for p in starts {
        if collides(world, p.x, p.y, cfg.robot_radius) {
            return Err(EvalError::Sim(SimError::StartCollides { x: p.x, y: p.y }));
        }
    }
    let runs: Result<Vec<Run>, SimError> = starts
        .par_iter()
        .enumerate()
        .map(|(i, start)| {
            let mut ctrl = make();
            simulate_run(start, goal, &mut ctrl, world, cfg, i as u32)
        })
        .collect();
    Ok(assemble(runs?, goal, cfg))
}

/// Closed-loop rollouts of a learned controller from each start: the network
/// maps every scan (plus the goal for the goal-input variant) to the wheel
/// command. Runs are simulated in parallel.
pub fn rollout_learned(
    net: &Network<f32>,
    world: &WorldSpec,
    starts: &[Pose],
    goal: &Pose,
    cfg: &RunConfig,
) -> Result<RolloutReport, EvalError> {
    let wants_goal = net.spec.variant.goal_input();
    rollout_runs(
        || {
            move |_: &Pose, scan: &crate::sim::ScanFrame, goal: &Pose| {
                net.forward_scan(scan, wants_goal.then_some(goal))
            }
        },
        world,
        starts,
        goal,
        cfg,
    )
}

/// The expert under the same reporting interface, forward gear.
pub fn rollout_omniscient(
    params: &ControlParams,
    world: &WorldSpec,
    starts: &[Pose],
    goal: &Pose,
    cfg: &RunConfig,
) -> Result<RolloutReport, EvalError> {
    let axle = cfg.axle;
    rollout_runs(
        || Omniscient { params: *params, axle, reverse: false },
        world,
        starts,
        goal,
        cfg,
    )
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), EvalError> {
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|source| EvalError::Io { path: path.display().to_string(), source })
}

/// Single-precision shortest-roundtrip rendering; recorded poses are stored
/// in single precision, so this prints them without float noise.
fn f(v: f64) -> f32 {
    v as f32
}

/// Writes the report as five CSV files into `out_dir` (created if missing):
/// trajectories.csv, distances.csv, final_positions.csv, heatmap.csv and
/// time_to_goal.csv. UTF-8, '.' decimal separator, LF line endings; the
/// export is deterministic byte for byte.
pub fn export_csv(report: &RolloutReport, out_dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|source| EvalError::Io { path: out_dir.display().to_string(), source })?;

    let mut trajectories = String::from("run,step,t,x,y,θ\n");
    let mut distances = String::from("run,step,euclidean,angular\n");
    for (run, r) in report.runs.iter().enumerate() {
        for (step, p) in r.trajectory.iter().enumerate() {
            let t = step as f64 * report.dt;
            trajectories.push_str(&format!(
                "{run},{step},{:.3},{},{},{}\n",
                t,
                f(p.x),
                f(p.y),
                f(p.heading)
            ));
            distances.push_str(&format!(
                "{run},{step},{},{}\n",
                f(r.distance[step]),
                f(r.heading_error[step])
            ));
        }
    }
    write_file(out_dir, "trajectories.csv", &trajectories)?;
    write_file(out_dir, "distances.csv", &distances)?;

    let mut finals = String::from("run,x,y,θ,reached\n");
    for (run, &(x, y, h, reached)) in report.final_positions.iter().enumerate() {
        finals.push_str(&format!("{run},{},{},{},{}\n", f(x), f(y), f(h), reached as u8));
    }
    write_file(out_dir, "final_positions.csv", &finals)?;

    let mut heatmap = String::from("x,y,count\n");
    for ix in 0..HEATMAP_CELLS {
        for iy in 0..HEATMAP_CELLS {
            let count = report.heatmap.counts[[ix, iy]];
            if count > 0 {
                heatmap.push_str(&format!(
                    "{:.3},{:.3},{count}\n",
                    Heatmap::center(ix),
                    Heatmap::center(iy)
                ));
            }
        }
    }
    write_file(out_dir, "heatmap.csv", &heatmap)?;

    let mut ttg = String::from("steps,count\n");
    for &(steps, count) in &report.time_to_goal {
        ttg.push_str(&format!("{steps},{count}\n"));
    }
    write_file(out_dir, "time_to_goal.csv", &ttg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{task1_goal, NormStats};
    use crate::nn::{NetworkSpec, Variant};
    use crate::sim::{build_horseshoe, WorldVariant};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn r2_examples() {
        let t = [1.0, 2.0, 3.0];
        assert_eq!(r2_score(&t, &t).unwrap(), 1.0);
        // the mean predictor scores exactly zero
        assert_eq!(r2_score(&[2.0, 2.0, 2.0], &t).unwrap(), 0.0);
        // one residual of 1 against a total variance of 2
        assert_eq!(r2_score(&[1.0, 2.0, 2.0], &t).unwrap(), 0.5);
    }

    #[test]
    fn r2_error_cases() {
        assert!(matches!(r2_score(&[1.0], &[1.0]), Err(EvalError::TooFewValues(1))));
        assert!(matches!(r2_score(&[], &[]), Err(EvalError::TooFewValues(0))));
        assert!(matches!(
            r2_score(&[1.0, 2.0], &[3.0, 3.0]),
            Err(EvalError::UndefinedR2)
        ));
    }

    proptest! {
        #[test]
        fn r2_invariant_under_common_shift(
            vals in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..40),
            c in -100.0f64..100.0,
        ) {
            let (pred, target): (Vec<f64>, Vec<f64>) = vals.into_iter().unzip();
            prop_assume!(target.iter().any(|&t| t != target[0]));
            let base = r2_score(&pred, &target).unwrap();
            let shifted = r2_score(
                &pred.iter().map(|p| p + c).collect::<Vec<_>>(),
                &target.iter().map(|t| t + c).collect::<Vec<_>>(),
            ).unwrap();
            prop_assert!((base - shifted).abs() <= 1e-6 * base.abs().max(1.0));
        }
    }

    #[test]
    fn demo_circle_is_on_the_circle_facing_the_goal() {
        let goal = task1_goal();
        let poses = demo_circle_poses(9, 1.5, &goal);
        assert_eq!(poses.len(), 9);
        let world = build_horseshoe(WorldVariant::Monochromatic);
        for p in &poses {
            assert!((p.distance(&goal) - 1.5).abs() < 1e-12);
            let bearing = (goal.y - p.y).atan2(goal.x - p.x);
            assert!(normalize_angle(bearing - p.heading).abs() < 1e-12);
            assert!(!collides(&world, p.x, p.y, RunConfig::default().robot_radius));
        }
        // evenly spaced: first pose due +x of the goal
        assert!((poses[0].x - (goal.x + 1.5)).abs() < 1e-12);
        assert!(poses[0].y.abs() < 1e-12);
    }

    #[test]
    fn omniscient_demo_rollout_converges_smoothly() {
        let goal = task1_goal();
        let world = build_horseshoe(WorldVariant::Monochromatic);
        let cfg = RunConfig::default();
        let starts = demo_circle_poses(9, 1.5, &goal);
        let report =
            rollout_omniscient(&ControlParams::default(), &world, &starts, &goal, &cfg).unwrap();
        assert_eq!(report.runs.len(), 9);
        for (i, run) in report.runs.iter().enumerate() {
            assert!(run.reached_goal, "pose {i} did not reach the goal");
            assert!(!run.collided);
            assert_eq!(run.distance.len(), run.trajectory.len());
            assert_eq!(run.heading_error.len(), run.trajectory.len());
            let steps = run.steps_to_goal.expect("reached runs record a step count");
            assert!(steps > 0 && (steps as usize) < cfg.max_steps);

            // Smooth convergence, no oscillation. Poses behind the goal must
            // swing around once to dock against the goal heading, and the
            // distance grows during that swing; it is a single contiguous
            // phase confined to the first half of the run, monotone within a
            // 1 mm band everywhere else.
            let growth: Vec<usize> = (1..run.distance.len() - 1)
                .filter(|&s| run.distance[s + 1] > run.distance[s] + 1e-3)
                .collect();
            if let (Some(&first), Some(&last)) = (growth.first(), growth.last()) {
                assert_eq!(last - first + 1, growth.len(), "pose {i}: several swing phases");
                assert!(last < run.distance.len() / 2, "pose {i}: swing in the final approach");
            }
            // Poses approaching from the goal-facing side drive straight in:
            // strictly monotone, no swing at all.
            let head_on = [0usize, 1, 2, 7, 8].contains(&i);
            assert!(!head_on || growth.is_empty(), "pose {i}: unexpected swing {growth:?}");
        }
        assert_eq!(report.time_to_goal.iter().map(|&(_, c)| c).sum::<u32>(), 9);
    }

    #[test]
    fn zero_network_times_out_everywhere() {
        let goal = task1_goal();
        let world = build_horseshoe(WorldVariant::Monochromatic);
        let cfg = RunConfig::default();
        let starts = demo_circle_poses(9, 1.5, &goal);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let norm = NormStats { mean: [0.9, 0.2, 0.2, 0.2], std: [0.5, 0.3, 0.3, 0.3] };
        let mut net: Network<f32> =
            Network::new(NetworkSpec::full(Variant::Baseline), &norm, &mut rng);
        for slot in 0..net.n_slots() {
            net.slot_mut(slot).fill(0.0);
        }
        let report = rollout_learned(&net, &world, &starts, &goal, &cfg).unwrap();
        for run in &report.runs {
            assert!(!run.reached_goal);
            assert_eq!(run.steps_to_goal, None);
            assert_eq!(run.trajectory.len(), cfg.max_steps + 1);
            // never moved: every sample sits in the start cell
            assert_eq!(run.trajectory.last(), run.trajectory.first());
        }
        assert!(report.time_to_goal.is_empty());
        // mass conservation: every recorded sample lands in some cell
        let samples: u64 = report.runs.iter().map(|r| r.trajectory.len() as u64).sum();
        assert_eq!(report.heatmap.total(), samples);
    }

    #[test]
    fn export_is_deterministic_and_conserves_mass() {
        let goal = task1_goal();
        let world = build_horseshoe(WorldVariant::Polychromatic);
        let cfg = RunConfig::default();
        let starts = demo_circle_poses(3, 1.5, &goal);
        let report =
            rollout_omniscient(&ControlParams::default(), &world, &starts, &goal, &cfg).unwrap();

        let dir = tempfile::tempdir().unwrap();
        export_csv(&report, dir.path()).unwrap();
        let names =
            ["trajectories.csv", "distances.csv", "final_positions.csv", "heatmap.csv", "time_to_goal.csv"];
        let first: Vec<Vec<u8>> =
            names.iter().map(|n| std::fs::read(dir.path().join(n)).unwrap()).collect();
        export_csv(&report, dir.path()).unwrap();
        for (name, bytes) in names.iter().zip(&first) {
            assert_eq!(&std::fs::read(dir.path().join(name)).unwrap(), bytes, "{name} changed");
        }

        let traj = std::str::from_utf8(&first[0]).unwrap();
        assert!(traj.starts_with("run,step,t,x,y,θ\n"));
        assert!(!traj.contains('\r'));
        let rows = traj.lines().count() - 1;
        let samples: usize = report.runs.iter().map(|r| r.trajectory.len()).sum();
        assert_eq!(rows, samples);

        let heat = std::str::from_utf8(&first[3]).unwrap();
        assert!(heat.starts_with("x,y,count\n"));
        let mass: u64 =
            heat.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
        assert_eq!(mass, samples as u64);

        let finals = std::str::from_utf8(&first[2]).unwrap();
        assert_eq!(finals.lines().count() - 1, 3);
        assert!(finals.starts_with("run,x,y,θ,reached\n"));
    }

    #[test]
    fn regression_of_the_mean_predictor_is_zero() {
        let ds = crate::dataset::generate(&crate::dataset::GenerateConfig {
            n_runs: 10,
            seed: 3,
            task: crate::dataset::Task::FixedGoal,
            world: WorldVariant::Monochromatic,
            run: RunConfig::default(),
            control: ControlParams::default(),
        })
        .unwrap();
        let (_, _, y) = design_matrices(&ds, Split::Train);
        let n = y.dim().0 as f64;
        let mean = [y.column(0).iter().map(|&v| v as f64).sum::<f64>() / n,
            y.column(1).iter().map(|&v| v as f64).sum::<f64>() / n];

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net: Network<f32> =
            Network::new(NetworkSpec { rays: 180, ..NetworkSpec::tiny(Variant::Baseline) }, &ds.norm, &mut rng);
        for slot in 0..net.n_slots() {
            net.slot_mut(slot).fill(0.0);
        }
        // last slot is the output bias: pin it at the train-split mean
        let bias = net.slot_mut(13);
        bias[0] = mean[0] as f32;
        bias[1] = mean[1] as f32;

        let rep = evaluate_regression(&net, &ds, Split::Train, crate::geom::DEFAULT_AXLE).unwrap();
        // the f32-rounded mean scores just below zero, never above
        for r2 in [rep.r2_left, rep.r2_right, rep.r2_linear, rep.r2_angular] {
            assert!(r2 <= 0.0 && r2 > -1e-4, "mean predictor r2 {r2}");
        }

        // an untrained network still produces four finite scores
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net: Network<f32> =
            Network::new(NetworkSpec { rays: 180, ..NetworkSpec::tiny(Variant::Baseline) }, &ds.norm, &mut rng);
        let rep = evaluate_regression(&net, &ds, Split::Val, crate::geom::DEFAULT_AXLE).unwrap();
        for r2 in [rep.r2_left, rep.r2_right, rep.r2_linear, rep.r2_angular] {
            assert!(r2.is_finite() && r2 <= 1.0);
        }
    }
}

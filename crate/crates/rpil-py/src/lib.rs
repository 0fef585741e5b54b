//! Python bindings for the docking pipeline: the pose controller, scanner,
//! dataset generation, training, regression evaluation and closed-loop
//! rollouts, mirroring the command-line surface.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use rpil::control::{control_step, ControlParams};
use rpil::dataset::{self, generate, load, load_meta, save, GenerateConfig, Split, Task};
use rpil::eval::{
    demo_circle_poses, evaluate_regression, export_csv, rollout_learned, rollout_omniscient,
};
use rpil::geom;
use rpil::nn::{
    gradient_check, load_model, save_model, train, LossKind, ModelMeta, Network, NetworkSpec,
    TrainConfig, Variant,
};
use rpil::sim::{build_horseshoe, raycast_scan, RunConfig, ScanFrame, WorldVariant};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_world(s: &str) -> PyResult<WorldVariant> {
    match s {
        "monochromatic" | "mono" => Ok(WorldVariant::Monochromatic),
        "polychromatic" | "poly" => Ok(WorldVariant::Polychromatic),
        other => Err(value_err(format!(
            "world '{other}': expected monochromatic or polychromatic"
        ))),
    }
}

fn parse_task(s: &str) -> PyResult<Task> {
    match s {
        "fixed" | "fixed_goal" => Ok(Task::FixedGoal),
        "ring" | "ring_goal" => Ok(Task::RingGoal),
        other => Err(value_err(format!("task '{other}': expected fixed or ring"))),
    }
}

fn parse_split(s: &str) -> PyResult<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(value_err(format!("split '{other}': expected train, val or test"))),
    }
}

fn parse_variant(s: &str) -> PyResult<Variant> {
    s.parse().map_err(value_err)
}

/// A planar pose: position in metres, heading in radians.
#[pyclass(module = "rpil_py", skip_from_py_object)]
#[derive(Clone)]
struct Pose {
    inner: geom::Pose,
}

#[pymethods]
impl Pose {
    #[new]
    fn new(x: f64, y: f64, heading: f64) -> Pose {
        Pose { inner: geom::Pose::new(x, y, heading) }
    }

    #[getter]
    fn x(&self) -> f64 {
        self.inner.x
    }

    #[getter]
    fn y(&self) -> f64 {
        self.inner.y
    }

    #[getter]
    fn heading(&self) -> f64 {
        self.inner.heading
    }

    fn __repr__(&self) -> String {
        format!("Pose({}, {}, {})", self.inner.x, self.inner.y, self.inner.heading)
    }
}

/// Wheel-speed command of the smooth pose controller for one robot/goal pair.
/// Returns (left, right) in m/s.
#[pyfunction]
#[pyo3(signature = (robot, goal, *, k1 = 1.0, k2 = 3.0, k3 = 2.0, beta = 0.4,
    lambda_ = 2.0, v_max = 0.55, axle = 0.108, reverse = false))]
#[allow(clippy::too_many_arguments)]
fn control_command(
    robot: &Pose,
    goal: &Pose,
    k1: f64,
    k2: f64,
    k3: f64,
    beta: f64,
    lambda_: f64,
    v_max: f64,
    axle: f64,
    reverse: bool,
) -> PyResult<(f64, f64)> {
    let params = ControlParams { k1, k2, k3, beta, lambda: lambda_, v_max };
    params.validate().map_err(value_err)?;
    let twist = control_step(&robot.inner, &goal.inner, &params, reverse);
    let w = geom::twist_to_wheels(&twist, axle);
    Ok((w.left, w.right))
}

/// (v, omega) -> (left, right).
#[pyfunction]
#[pyo3(signature = (v, omega, axle = 0.108))]
fn twist_to_wheels(v: f64, omega: f64, axle: f64) -> (f64, f64) {
    let w = geom::twist_to_wheels(&geom::Twist { v, omega }, axle);
    (w.left, w.right)
}

/// (left, right) -> (v, omega).
#[pyfunction]
#[pyo3(signature = (left, right, axle = 0.108))]
fn wheels_to_twist(left: f64, right: f64, axle: f64) -> (f64, f64) {
    let t = geom::wheels_to_twist(&geom::WheelSpeeds { left, right }, axle);
    (t.v, t.omega)
}

type ScanTuple = (Vec<f64>, Vec<(f64, f64, f64)>);

/// 360° scan from a pose: (distances, colors) with one (r, g, b) per ray.
#[pyfunction]
#[pyo3(signature = (pose, world = "monochromatic"))]
fn scan(pose: &Pose, world: &str) -> PyResult<ScanTuple> {
    let spec = build_horseshoe(parse_world(world)?);
    let frame = raycast_scan(&pose.inner, &spec);
    let colors = frame.colors.iter().map(|c| (c[0], c[1], c[2])).collect();
    Ok((frame.distances, colors))
}

/// The docking goal in front of the horseshoe opening.
#[pyfunction]
fn goal_pose() -> Pose {
    Pose { inner: dataset::task1_goal() }
}

/// Start poses evenly spaced on a circle around the goal, facing it.
#[pyfunction]
#[pyo3(signature = (n = 9, radius = 1.5))]
fn demo_circle(n: usize, radius: f64) -> Vec<Pose> {
    demo_circle_poses(n, radius, &dataset::task1_goal())
        .into_iter()
        .map(|inner| Pose { inner })
        .collect()
}

/// Generate an expert dataset and write it (plus its JSON sidecar).
/// Returns run statistics.
#[pyfunction]
#[pyo3(signature = (path, *, n_runs = 200, seed = 0, task = "fixed", world = "monochromatic"))]
fn generate_dataset(
    py: Python<'_>,
    path: &str,
    n_runs: u32,
    seed: u64,
    task: &str,
    world: &str,
) -> PyResult<Py<PyAny>> {
    let cfg = GenerateConfig {
        n_runs,
        seed,
        task: parse_task(task)?,
        world: parse_world(world)?,
        run: RunConfig::default(),
        control: ControlParams::default(),
    };
    let ds = generate(&cfg).map_err(runtime_err)?;
    save(&ds, &cfg, path.as_ref()).map_err(runtime_err)?;
    let reached = ds.runs.iter().filter(|r| r.run.reached_goal).count();
    let collided = ds.runs.iter().filter(|r| r.run.collided).count();
    let d = pyo3::types::PyDict::new(py);
    d.set_item("runs", ds.runs.len())?;
    d.set_item("reached", reached)?;
    d.set_item("collided", collided)?;
    d.set_item("samples", ds.n_samples())?;
    Ok(d.into())
}

/// Train a network variant on a dataset file; writes the model and returns
/// the loss history.
#[pyfunction]
#[pyo3(signature = (dataset, model, *, variant = "baseline", loss = "mse",
    learning_rate = 1e-3, batch_size = 1024, patience = 20, max_epochs = 500, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train_model(
    py: Python<'_>,
    dataset: &str,
    model: &str,
    variant: &str,
    loss: &str,
    learning_rate: f64,
    batch_size: usize,
    patience: usize,
    max_epochs: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let variant = parse_variant(variant)?;
    let meta = load_meta(dataset.as_ref()).map_err(runtime_err)?;
    if variant.goal_input() && meta.task == Task::FixedGoal {
        return Err(value_err(format!(
            "goal input required: variant {variant} is goal-conditioned but {dataset} is a \
             fixed-goal dataset"
        )));
    }
    let ds = load(dataset.as_ref()).map_err(runtime_err)?;
    let cfg = TrainConfig {
        learning_rate,
        batch_size,
        patience,
        max_epochs,
        loss: loss.parse::<LossKind>().map_err(value_err)?,
        seed,
        ..TrainConfig::default()
    };
    let (net, history) = py
        .detach(|| train(&ds, NetworkSpec::full(variant), &cfg))
        .map_err(runtime_err)?;
    let meta = ModelMeta {
        variant,
        train: cfg,
        norm: ds.norm,
        dataset_file: Some(dataset.to_string()),
        dataset_crc32: None,
    };
    save_model(&net, &meta, model.as_ref()).map_err(runtime_err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("epochs", history.epochs())?;
    d.set_item("best_epoch", history.best_epoch)?;
    d.set_item("train_loss", history.train_loss)?;
    d.set_item("val_loss", history.val_loss)?;
    Ok(d.into())
}

/// R² of a model's predictions on one dataset split, per wheel and as a
/// reconstructed twist.
#[pyfunction]
#[pyo3(signature = (dataset, model, *, split = "val", axle = 0.108))]
fn evaluate(
    py: Python<'_>,
    dataset: &str,
    model: &str,
    split: &str,
    axle: f64,
) -> PyResult<Py<PyAny>> {
    let ds = load(dataset.as_ref()).map_err(runtime_err)?;
    let (net, _) = load_model(model.as_ref()).map_err(runtime_err)?;
    let rep =
        evaluate_regression(&net, &ds, parse_split(split)?, axle).map_err(runtime_err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("r2_left", rep.r2_left)?;
    d.set_item("r2_right", rep.r2_right)?;
    d.set_item("r2_linear", rep.r2_linear)?;
    d.set_item("r2_angular", rep.r2_angular)?;
    Ok(d.into())
}

/// Closed-loop rollouts from the demo circle with either the trained model
/// (`model=path`) or the expert controller (`model=None`). Optionally exports
/// the CSV reports.
#[pyfunction]
#[pyo3(signature = (*, model = None, out_dir = None, demo_circle = 9, demo_radius = 1.5,
    world = "monochromatic", max_steps = 200))]
fn rollout(
    py: Python<'_>,
    model: Option<&str>,
    out_dir: Option<&str>,
    demo_circle: usize,
    demo_radius: f64,
    world: &str,
    max_steps: usize,
) -> PyResult<Py<PyAny>> {
    let spec = build_horseshoe(parse_world(world)?);
    let goal = dataset::task1_goal();
    let starts = demo_circle_poses(demo_circle, demo_radius, &goal);
    let cfg = RunConfig { max_steps, ..RunConfig::default() };
    let report = py.detach(|| match model {
        Some(path) => {
            let (net, _) = load_model(path.as_ref()).map_err(runtime_err)?;
            rollout_learned(&net, &spec, &starts, &goal, &cfg).map_err(runtime_err)
        }
        None => rollout_omniscient(&ControlParams::default(), &spec, &starts, &goal, &cfg)
            .map_err(runtime_err),
    })?;
    if let Some(dir) = out_dir {
        export_csv(&report, dir.as_ref()).map_err(runtime_err)?;
    }
    let reached = report.runs.iter().filter(|r| r.reached_goal).count();
    let collided = report.runs.iter().filter(|r| r.collided).count();
    let min_distance: Vec<f64> = report
        .runs
        .iter()
        .map(|r| r.distance.iter().cloned().fold(f64::INFINITY, f64::min))
        .collect();
    let d = pyo3::types::PyDict::new(py);
    d.set_item("runs", report.runs.len())?;
    d.set_item("reached", reached)?;
    d.set_item("collided", collided)?;
    d.set_item("min_distance", min_distance)?;
    Ok(d.into())
}

/// Worst relative error between analytic and finite-difference gradients for
/// one architecture variant.
#[pyfunction]
#[pyo3(signature = (variant = "baseline", seed = 0))]
fn gradcheck(variant: &str, seed: u64) -> PyResult<f64> {
    Ok(gradient_check(parse_variant(variant)?, seed))
}

/// A trained network loaded from disk, ready for single-scan predictions.
#[pyclass(module = "rpil_py")]
struct Model {
    net: Network<f32>,
    variant: Variant,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Model> {
        let (net, meta) = load_model(path.as_ref()).map_err(runtime_err)?;
        Ok(Model { net, variant: meta.variant })
    }

    #[getter]
    fn variant(&self) -> String {
        self.variant.to_string()
    }

    /// One scan (+ goal pose for the goal-conditioned variant) to a
    /// (left, right) wheel command.
    #[pyo3(signature = (distances, colors, goal = None))]
    fn predict(
        &self,
        distances: Vec<f64>,
        colors: Vec<(f64, f64, f64)>,
        goal: Option<&Pose>,
    ) -> PyResult<(f64, f64)> {
        if distances.len() != self.net.spec.rays {
            return Err(value_err(format!(
                "scan has {} rays but the network expects {}",
                distances.len(),
                self.net.spec.rays
            )));
        }
        if colors.len() != distances.len() {
            return Err(value_err("distances and colors must have equal length"));
        }
        if self.variant.goal_input() != goal.is_some() {
            return Err(value_err(if self.variant.goal_input() {
                "this variant needs a goal pose"
            } else {
                "this variant takes no goal pose"
            }));
        }
        let frame = ScanFrame {
            distances,
            colors: colors.into_iter().map(|(r, g, b)| [r, g, b]).collect(),
        };
        let w = self.net.forward_scan(&frame, goal.map(|g| &g.inner));
        Ok((w.left, w.right))
    }
}

#[pymodule]
fn rpil_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Pose>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(control_command, m)?)?;
    m.add_function(wrap_pyfunction!(twist_to_wheels, m)?)?;
    m.add_function(wrap_pyfunction!(wheels_to_twist, m)?)?;
    m.add_function(wrap_pyfunction!(scan, m)?)?;
    m.add_function(wrap_pyfunction!(goal_pose, m)?)?;
    m.add_function(wrap_pyfunction!(demo_circle, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(rollout, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}

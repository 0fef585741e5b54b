//! Command-line pipeline: dataset generation, training, regression
//! evaluation, closed-loop rollouts and gradient checking, driven by one flat
//! JSON config file with flag overrides. Every file output is a pure function
//! of the config and seed.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, FromArgMatches, Subcommand};
use serde::Deserialize;

use crate::control::ControlParams;
use crate::dataset::{
    generate, load, load_meta, save, sidecar_path, DataError, Dataset, GenerateConfig, Split, Task,
};
use crate::eval::{
    demo_circle_poses, evaluate_regression, export_csv, rollout_learned, rollout_omniscient,
    EvalError, RolloutReport,
};
use crate::geom::Pose;
use crate::nn::{
    gradient_check, load_model, save_model, train, LossKind, ModelMeta, NetworkSpec, NnError,
    Variant,
};
use crate::sim::{build_horseshoe, RunConfig, SimError, WorldVariant};

/// Exit status: 0 ok, 1 usage, 2 data error, 3 numeric error.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> CliError {
        match e {
            DataError::Sim(SimError::NonFiniteCommand { .. }) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> CliError {
        match e {
            NnError::Numeric { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> CliError {
        match e {
            EvalError::UndefinedR2 | EvalError::TooFewValues(_) => CliError::Numeric(e.to_string()),
            EvalError::Sim(SimError::NonFiniteCommand { .. }) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

/// Every config key, overridable from the command line. The same names form
/// the flat JSON config file; flags beat file values, the seed falls back to
/// the RPIL_SEED environment variable.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Flags {
    /// JSON config file holding any of the other keys.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Seed for generation and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for run-level parallelism (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Number of runs to generate.
    #[arg(long = "runs", global = true)]
    pub n_runs: Option<u32>,
    /// Goal sampling: fixed | ring.
    #[arg(long, global = true)]
    pub task: Option<String>,
    /// Object colouring: monochromatic | polychromatic.
    #[arg(long, global = true)]
    pub world: Option<String>,

    /// Reference-heading gain.
    #[arg(long, global = true)]
    pub k1: Option<f64>,
    /// Heading-error gain.
    #[arg(long, global = true)]
    pub k2: Option<f64>,
    /// Final-approach deceleration gain (v ≤ k3·r).
    #[arg(long, global = true)]
    pub k3: Option<f64>,
    /// Curvature speed-shaping weight.
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Curvature speed-shaping exponent.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Cruise speed, m/s.
    #[arg(long, global = true)]
    pub v_max: Option<f64>,

    /// Simulation step, seconds.
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Step cap per run.
    #[arg(long, global = true)]
    pub max_steps: Option<usize>,
    /// Recorded steps after the goal is first reached.
    #[arg(long, global = true)]
    pub settle_steps: Option<usize>,
    /// Goal position tolerance, metres.
    #[arg(long, global = true)]
    pub pos_tol: Option<f64>,
    /// Goal heading tolerance, radians.
    #[arg(long, global = true)]
    pub ang_tol: Option<f64>,
    /// Robot disc radius, metres.
    #[arg(long, global = true)]
    pub robot_radius: Option<f64>,
    /// Wheel separation, metres.
    #[arg(long, global = true)]
    pub axle: Option<f64>,
    /// Per-wheel speed limit, m/s.
    #[arg(long, global = true)]
    pub v_wheel_max: Option<f64>,

    /// Architecture: baseline | maxpool | baseline_dropout | maxpool_dropout | task2.
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// Training objective: mse | smooth_l1.
    #[arg(long, global = true)]
    pub loss: Option<String>,
    /// Adam learning rate.
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    /// Minibatch size.
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    /// Epochs without validation improvement before stopping.
    #[arg(long, global = true)]
    pub patience: Option<usize>,
    /// Epoch cap.
    #[arg(long, global = true)]
    pub max_epochs: Option<usize>,
    /// Adam first-moment decay.
    #[arg(long, global = true)]
    pub beta1: Option<f64>,
    /// Adam second-moment decay.
    #[arg(long, global = true)]
    pub beta2: Option<f64>,
    /// Adam denominator offset.
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,

    /// Dataset split to evaluate: train | val | test.
    #[arg(long, global = true)]
    pub split: Option<String>,
    /// Rollout controller: learned | omniscient.
    #[arg(long, global = true)]
    pub controller: Option<String>,
    /// Number of rollout start poses on the demo circle.
    #[arg(long, global = true)]
    pub demo_circle: Option<usize>,
    /// Demo circle radius, metres.
    #[arg(long, global = true)]
    pub demo_radius: Option<f64>,

    /// Dataset file path.
    #[arg(long, global = true)]
    pub dataset_file: Option<PathBuf>,
    /// Model file path.
    #[arg(long, global = true)]
    pub model_file: Option<PathBuf>,
    /// Training history CSV path.
    #[arg(long, global = true)]
    pub history_file: Option<PathBuf>,
    /// Directory for rollout CSV exports.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

impl Flags {
    /// File values fill in whatever the command line left unset.
    fn or(self, file: Flags) -> Flags {
        macro_rules! pick {
            ($($f:ident),* $(,)?) => {
                Flags { $($f: self.$f.or(file.$f)),* }
            };
        }
        pick!(
            config, seed, jobs, n_runs, task, world, k1, k2, k3, beta, lambda, v_max, dt,
            max_steps, settle_steps, pos_tol, ang_tol, robot_radius, axle, v_wheel_max, variant,
            loss, learning_rate, batch_size, patience, max_epochs, beta1, beta2, epsilon, split,
            controller, demo_circle, demo_radius, dataset_file, model_file, history_file, out_dir,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Learned,
    Omniscient,
}

/// The fully-resolved configuration every command runs from.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub jobs: Option<usize>,
    pub gen: GenerateConfig,
    pub train: crate::nn::TrainConfig,
    pub variant: Variant,
    pub split: Split,
    pub controller: ControllerKind,
    pub demo_circle: usize,
    pub demo_radius: f64,
    pub dataset_file: PathBuf,
    pub model_file: PathBuf,
    pub history_file: PathBuf,
    pub out_dir: PathBuf,
}

fn parse_enum<T>(what: &str, s: &str) -> Result<T, CliError>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| CliError::Usage(format!("{what} '{s}': {e}")))
}

fn parse_task(s: &str) -> Result<Task, CliError> {
    match s {
        "fixed" | "fixed_goal" => Ok(Task::FixedGoal),
        "ring" | "ring_goal" => Ok(Task::RingGoal),
        other => Err(CliError::Usage(format!("task '{other}': expected fixed or ring"))),
    }
}

fn parse_world(s: &str) -> Result<WorldVariant, CliError> {
    match s {
        "monochromatic" | "mono" => Ok(WorldVariant::Monochromatic),
        "polychromatic" | "poly" => Ok(WorldVariant::Polychromatic),
        other => Err(CliError::Usage(format!(
            "world '{other}': expected monochromatic or polychromatic"
        ))),
    }
}

fn parse_split(s: &str) -> Result<Split, CliError> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(CliError::Usage(format!("split '{other}': expected train, val or test"))),
    }
}

fn parse_controller(s: &str) -> Result<ControllerKind, CliError> {
    match s {
        "learned" => Ok(ControllerKind::Learned),
        "omniscient" => Ok(ControllerKind::Omniscient),
        other => Err(CliError::Usage(format!(
            "controller '{other}': expected learned or omniscient"
        ))),
    }
}

/// Merges command line > config file > RPIL_SEED > defaults and validates
/// every component.
pub fn resolve(flags: Flags, env_seed: Option<&str>) -> Result<Resolved, CliError> {
    let flags = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
            let file: Flags = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
            flags.or(file)
        }
        None => flags,
    };

    let seed = match (flags.seed, env_seed) {
        (Some(s), _) => s,
        (None, Some(raw)) => raw
            .parse::<u64>()
            .map_err(|_| CliError::Usage(format!("RPIL_SEED '{raw}' is not a u64")))?,
        (None, None) => 0,
    };

    let dc = ControlParams::default();
    let control = ControlParams {
        k1: flags.k1.unwrap_or(dc.k1),
        k2: flags.k2.unwrap_or(dc.k2),
        k3: flags.k3.unwrap_or(dc.k3),
        beta: flags.beta.unwrap_or(dc.beta),
        lambda: flags.lambda.unwrap_or(dc.lambda),
        v_max: flags.v_max.unwrap_or(dc.v_max),
    };
    control.validate().map_err(CliError::Usage)?;

    let dr = RunConfig::default();
    let run = RunConfig {
        dt: flags.dt.unwrap_or(dr.dt),
        max_steps: flags.max_steps.unwrap_or(dr.max_steps),
        settle_steps: flags.settle_steps.unwrap_or(dr.settle_steps),
        pos_tol: flags.pos_tol.unwrap_or(dr.pos_tol),
        ang_tol: flags.ang_tol.unwrap_or(dr.ang_tol),
        robot_radius: flags.robot_radius.unwrap_or(dr.robot_radius),
        axle: flags.axle.unwrap_or(dr.axle),
        v_wheel_max: flags.v_wheel_max.unwrap_or(dr.v_wheel_max),
    };
    run.validate().map_err(CliError::Usage)?;

    let dt = crate::nn::TrainConfig::default();
    let train = crate::nn::TrainConfig {
        learning_rate: flags.learning_rate.unwrap_or(dt.learning_rate),
        batch_size: flags.batch_size.unwrap_or(dt.batch_size),
        patience: flags.patience.unwrap_or(dt.patience),
        max_epochs: flags.max_epochs.unwrap_or(dt.max_epochs),
        loss: match &flags.loss {
            Some(s) => parse_enum::<LossKind>("loss", s)?,
            None => dt.loss,
        },
        seed,
        beta1: flags.beta1.unwrap_or(dt.beta1),
        beta2: flags.beta2.unwrap_or(dt.beta2),
        epsilon: flags.epsilon.unwrap_or(dt.epsilon),
    };
    train.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    Ok(Resolved {
        jobs: flags.jobs,
        gen: GenerateConfig {
            n_runs: flags.n_runs.unwrap_or(200),
            seed,
            task: match &flags.task {
                Some(s) => parse_task(s)?,
                None => Task::FixedGoal,
            },
            world: match &flags.world {
                Some(s) => parse_world(s)?,
                None => WorldVariant::Monochromatic,
            },
            run,
            control,
        },
        train,
        variant: match &flags.variant {
            Some(s) => parse_enum::<Variant>("variant", s)?,
            None => Variant::Baseline,
        },
        split: match &flags.split {
            Some(s) => parse_split(s)?,
            None => Split::Val,
        },
        controller: match &flags.controller {
            Some(s) => parse_controller(s)?,
            None => ControllerKind::Learned,
        },
        demo_circle: flags.demo_circle.unwrap_or(9),
        demo_radius: flags.demo_radius.unwrap_or(1.5),
        dataset_file: flags.dataset_file.unwrap_or_else(|| PathBuf::from("dataset.rpil")),
        model_file: flags.model_file.unwrap_or_else(|| PathBuf::from("model.rpnn")),
        history_file: flags.history_file.unwrap_or_else(|| PathBuf::from("history.csv")),
        out_dir: flags.out_dir.unwrap_or_else(|| PathBuf::from("report")),
    })
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Generate a dataset of expert runs and write it with its JSON sidecar.
    Generate,
    /// Train a network variant on a dataset; write the model and loss history.
    Train,
    /// Score a model's predictions against a dataset split (R² report).
    Eval,
    /// Roll out a controller from the demo circle and export the CSV reports.
    Rollout,
    /// Finite-difference check of the analytic gradients, all variants.
    Gradcheck,
}

fn print_run_stats(ds: &Dataset) {
    let n = ds.runs.len().max(1);
    let reached = ds.runs.iter().filter(|r| r.run.reached_goal).count();
    let collided = ds.runs.iter().filter(|r| r.run.collided).count();
    println!(
        "runs {} reached {:.1}% collided {:.1}% samples {}",
        ds.runs.len(),
        100.0 * reached as f64 / n as f64,
        100.0 * collided as f64 / n as f64,
        ds.n_samples()
    );
}

pub fn cmd_generate(r: &Resolved) -> Result<(), CliError> {
    let ds = generate(&r.gen)?;
    save(&ds, &r.gen, &r.dataset_file)?;
    println!("wrote {} (+ sidecar {})", r.dataset_file.display(), sidecar_path(&r.dataset_file).display());
    print_run_stats(&ds);
    Ok(())
}

/// CRC32 trailer of a dataset file (its last four bytes).
fn file_crc32(path: &Path) -> Result<u32, CliError> {
    let buf = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if buf.len() < 4 {
        return Err(CliError::Data(format!("{}: too short for a checksum", path.display())));
    }
    Ok(u32::from_le_bytes(buf[buf.len() - 4..].try_into().unwrap()))
}

pub fn cmd_train(r: &Resolved) -> Result<(), CliError> {
    let meta = load_meta(&r.dataset_file)?;
    if r.variant.goal_input() && meta.task == Task::FixedGoal {
        return Err(CliError::Data(format!(
            "goal input required: variant {} is goal-conditioned but {} is a fixed-goal dataset; \
             generate one with --task ring",
            r.variant,
            r.dataset_file.display()
        )));
    }
    let ds = load(&r.dataset_file)?;
    let spec = NetworkSpec::full(r.variant);
    let (net, history) = train(&ds, spec, &r.train)?;

    let model_meta = ModelMeta {
        variant: r.variant,
        train: r.train.clone(),
        norm: ds.norm,
        dataset_file: Some(r.dataset_file.display().to_string()),
        dataset_crc32: Some(file_crc32(&r.dataset_file)?),
    };
    save_model(&net, &model_meta, &r.model_file)?;
    std::fs::write(&r.history_file, history.to_csv())
        .map_err(|e| CliError::Data(format!("{}: {e}", r.history_file.display())))?;
    println!("wrote {} and {}", r.model_file.display(), r.history_file.display());
    println!(
        "epochs {} best {} val_loss {}",
        history.epochs(),
        history.best_epoch,
        history.val_loss[history.best_epoch - 1]
    );
    Ok(())
}

pub fn cmd_eval(r: &Resolved) -> Result<(), CliError> {
    let ds = load(&r.dataset_file)?;
    let (net, _meta) = load_model(&r.model_file)?;
    let rep = evaluate_regression(&net, &ds, r.split, r.gen.run.axle)?;
    println!("r2_left {}", rep.r2_left);
    println!("r2_right {}", rep.r2_right);
    println!("r2_linear {}", rep.r2_linear);
    println!("r2_angular {}", rep.r2_angular);
    Ok(())
}

fn print_rollout_summary(report: &RolloutReport, starts: &[Pose]) {
    let reached = report.runs.iter().filter(|r| r.reached_goal).count();
    let collided = report.runs.iter().filter(|r| r.collided).count();
    println!("rollouts {} reached {reached} collided {collided}", starts.len());
}

pub fn cmd_rollout(r: &Resolved) -> Result<(), CliError> {
    let world = build_horseshoe(r.gen.world);
    let goal = crate::dataset::task1_goal();
    let starts = demo_circle_poses(r.demo_circle, r.demo_radius, &goal);
    let report = match r.controller {
        ControllerKind::Omniscient => {
            rollout_omniscient(&r.gen.control, &world, &starts, &goal, &r.gen.run)?
        }
        ControllerKind::Learned => {
            let (net, _meta) = load_model(&r.model_file)?;
            rollout_learned(&net, &world, &starts, &goal, &r.gen.run)?
        }
    };
    export_csv(&report, &r.out_dir)?;
    println!("wrote CSV reports to {}", r.out_dir.display());
    print_rollout_summary(&report, &starts);
    Ok(())
}

pub fn cmd_gradcheck(r: &Resolved) -> Result<(), CliError> {
    let mut worst = 0.0f64;
    for variant in Variant::ALL {
        let err = gradient_check(variant, r.gen.seed);
        println!("{variant} {err:e}");
        worst = worst.max(err);
    }
    // negated so a NaN error also fails
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(worst < 1e-4) {
        return Err(CliError::Numeric(format!(
            "gradient check failed: max relative error {worst:e} ≥ 1e-4"
        )));
    }
    Ok(())
}

/// Parses the arguments and runs the selected command; returns the process
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cmd = clap::Command::new("rpil")
        .about("Imitation-learned docking: data generation, training, evaluation")
        .subcommand_required(true)
        .arg_required_else_help(true);
    let cmd = Cmd::augment_subcommands(cmd);
    let cmd = Flags::augment_args(cmd);
    let matches = match cmd.try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            // --help and --version are not usage errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (cmd, flags) = match (Cmd::from_arg_matches(&matches), Flags::from_arg_matches(&matches)) {
        (Ok(c), Ok(f)) => (c, f),
        (Err(e), _) | (_, Err(e)) => {
            let _ = e.print();
            return 1;
        }
    };

    let env_seed = std::env::var("RPIL_SEED").ok();
    match execute(cmd, flags, env_seed.as_deref()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn execute(cmd: Cmd, flags: Flags, env_seed: Option<&str>) -> Result<(), CliError> {
    let resolved = resolve(flags, env_seed)?;
    if let Some(jobs) = resolved.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?;
    }
    match cmd {
        Cmd::Generate => cmd_generate(&resolved),
        Cmd::Train => cmd_train(&resolved),
        Cmd::Eval => cmd_eval(&resolved),
        Cmd::Rollout => cmd_rollout(&resolved),
        Cmd::Gradcheck => cmd_gradcheck(&resolved),
    }
}

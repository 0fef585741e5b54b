//! Dataset generation and storage: spawn/goal sampling, reverse-gear
//! decision, expert rollouts with deterministic per-run rng substreams,
//! 70/15/15 run-level splits, per-channel normalization statistics, and a
//! checksummed little-endian binary file format with a JSON sidecar.

use crate::binio::{CrcReader, CrcWriter};
use crate::control::ControlParams;
use crate::geom::{Pose, WheelSpeeds};
use crate::sim::{
    build_horseshoe, collides, simulate_run, Omniscient, Run, RunConfig, ScanFrame, WorldSpec,
    WorldVariant, INNER_GAP, X_BACK_INNER,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Maximum spawn distance from the object center, metres.
pub const MAX_SPAWN_DIST: f64 = 2.0;
/// Task-2 goal ring radii, metres (outside the object, inside scanner range).
pub const RING_R_IN: f64 = 0.45;
pub const RING_R_OUT: f64 = 1.2;
/// Fixed-goal x offset, metres (in front of the arms, facing the object).
pub const GOAL_OFFSET: f64 = 0.25;

const SPAWN_MAX_ATTEMPTS: usize = 10_000;
/// Rng stream reserved for the run shuffle (never collides with per-run
/// substreams, which count up from zero).
const SHUFFLE_STREAM: u64 = u64::MAX;

/// Round f64 to single precision. Samples are recorded at single precision
/// so the in-memory dataset is bit-identical to its file image; commands are
/// then recomputable exactly from stored poses.
pub(crate) fn to_stored(v: f64) -> f64 {
    v as f32 as f64
}

/// One training example: what the scanner saw, where the goal was, and what
/// the expert commanded. The robot pose is kept for diagnostics and replay
/// checks only; learned controllers never see it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub scan: ScanFrame,
    pub goal_pose: Pose,
    pub target_wheels: WheelSpeeds,
    pub robot_pose: Pose,
    pub run_id: u32,
    pub step: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Dock at the fixed pose in front of the arms.
    FixedGoal,
    /// Reach a random pose in a ring around the object.
    RingGoal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train = 0,
    Val = 1,
    Test = 2,
}

impl Split {
    fn from_tag(tag: u8) -> Result<Split, DataError> {
        match tag {
            0 => Ok(Split::Train),
            1 => Ok(Split::Val),
            2 => Ok(Split::Test),
            t => Err(DataError::Invalid(format!("unknown split tag {t}"))),
        }
    }
}

/// Per-channel standardization statistics over the train split; channels are
/// (distance, red, green, blue). Stored at single precision in the file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f32; 4],
    pub std: [f32; 4],
}

/// One run with its split assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRun {
    pub split: Split,
    pub run: Run,
}

/// A generated dataset: runs in train, validation, test order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scanner_rays: u32,
    pub norm: NormStats,
    pub runs: Vec<DatasetRun>,
}

impl Dataset {
    pub fn split_runs(&self, split: Split) -> impl Iterator<Item = &DatasetRun> {
        self.runs.iter().filter(move |r| r.split == split)
    }

    pub fn split_samples(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.split_runs(split).flat_map(|r| r.run.samples.iter())
    }

    pub fn n_samples(&self) -> usize {
        self.runs.iter().map(|r| r.run.samples.len()).sum()
    }
}

/// Everything needed to regenerate a dataset; written as the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub n_runs: u32,
    pub seed: u64,
    pub task: Task,
    pub world: WorldVariant,
    pub run: RunConfig,
    pub control: ControlParams,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("not a dataset file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported dataset file version {0} (this build reads version 1)")]
    UnsupportedVersion(u32),
    #[error("file truncated")]
    Truncated,
    #[error("checksum mismatch (corrupted file)")]
    ChecksumMismatch,
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("simulation failed: {0}")]
    Sim(#[from] crate::sim::SimError),
}

fn map_io(e: io::Error) -> DataError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        DataError::Truncated
    } else {
        DataError::Io(e)
    }
}

/// The fixed docking goal: on the object axis, in front of the arms, facing
/// the object.
pub fn task1_goal() -> Pose {
    Pose::new(GOAL_OFFSET, 0.0, PI)
}

/// Samples a goal pose area-uniformly over the ring [RING_R_IN, RING_R_OUT]
/// around the object, heading uniform, rejecting collisions with margin.
pub fn task2_goal(rng: &mut ChaCha8Rng, world: &WorldSpec, robot_radius: f64) -> Result<Pose, DataError> {
    for _ in 0..SPAWN_MAX_ATTEMPTS {
        let u: f64 = rng.random_range(0.0..1.0);
        let r = (RING_R_IN * RING_R_IN + u * (RING_R_OUT * RING_R_OUT - RING_R_IN * RING_R_IN)).sqrt();
        let phi = rng.random_range(-PI..PI);
        let heading = rng.random_range(-PI..PI);
        let pose = Pose::new(r * phi.cos(), r * phi.sin(), heading);
        if !collides(world, pose.x, pose.y, robot_radius) {
            return Ok(pose);
        }
    }
    Err(DataError::Generation("goal sampling rejected 10000 draws (malformed world)".into()))
}

/// Samples a spawn pose: distance area-uniform up to MAX_SPAWN_DIST, angle
/// and heading uniform, rejecting poses that collide with the object (margin
/// one robot radius). Fails after 10,000 rejections.
pub fn spawn_pose(rng: &mut ChaCha8Rng, world: &WorldSpec, robot_radius: f64) -> Result<Pose, DataError> {
    for _ in 0..SPAWN_MAX_ATTEMPTS {
        let u: f64 = rng.random_range(0.0..1.0);
        let r = MAX_SPAWN_DIST * u.sqrt();
        let phi = rng.random_range(-PI..PI);
        let heading = rng.random_range(-PI..PI);
        let pose = Pose::new(r * phi.cos(), r * phi.sin(), heading);
        if !collides(world, pose.x, pose.y, robot_radius) {
            return Ok(pose);
        }
    }
    Err(DataError::Generation("spawn sampling rejected 10000 draws (malformed world)".into()))
}

/// True iff the position lies strictly inside the rectangle spanning the
/// inner gap between the arms, from the back wall's inner face to one robot
/// radius past the goal x. Spawns here make the expert drive in reverse.
pub fn in_reverse_region(pose: &Pose, goal: &Pose, robot_radius: f64) -> bool {
    let half_gap = INNER_GAP / 2.0;
    pose.x > X_BACK_INNER
        && pose.x < goal.x + robot_radius
        && pose.y > -half_gap
        && pose.y < half_gap
}

/// Run counts per split: round(0.70 n) train, round(0.15 n) validation, the
/// remainder test.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = (0.70 * n as f64).round() as usize;
    let val = (0.15 * n as f64).round() as usize;
    (train, val, n - train - val)
}

/// Per-channel mean/std (population) over every ray of every given sample,
/// accumulated in f64, std floored at 1e−6 (a colour channel is constant in
/// the monochromatic world).
pub fn compute_norm_stats<'a>(samples: impl Iterator<Item = &'a Sample>) -> NormStats {
    let mut sum = [0.0f64; 4];
    let mut sumsq = [0.0f64; 4];
    let mut n = 0u64;
    for s in samples {
        for (d, c) in s.scan.distances.iter().zip(&s.scan.colors) {
            let v = [*d, c[0], c[1], c[2]];
            for ch in 0..4 {
                sum[ch] += v[ch];
                sumsq[ch] += v[ch] * v[ch];
            }
            n += 1;
        }
    }
    assert!(n > 0, "normalization statistics need at least one sample");
    let mut mean = [0.0f32; 4];
    let mut std = [0.0f32; 4];
    for ch in 0..4 {
        let m = sum[ch] / n as f64;
        let var = (sumsq[ch] / n as f64 - m * m).max(0.0);
        mean[ch] = m as f32;
        std[ch] = var.sqrt().max(1e-6) as f32;
    }
    NormStats { mean, std }
}

/// Rolls out one run on its own rng substream. Draw order: goal (ring task
/// only), then spawn, then the reverse decision from the spawn position.
fn one_run(cfg: &GenerateConfig, world: &WorldSpec, substream: u64) -> Result<Run, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(substream);
    let goal = match cfg.task {
        Task::FixedGoal => task1_goal(),
        Task::RingGoal => task2_goal(&mut rng, world, cfg.run.robot_radius)?,
    };
    let spawn = spawn_pose(&mut rng, world, cfg.run.robot_radius)?;
    let reverse = in_reverse_region(&spawn, &goal, cfg.run.robot_radius);
    let mut ctrl = Omniscient { params: cfg.control, axle: cfg.run.axle, reverse };
    let mut run = simulate_run(&spawn, &goal, &mut ctrl, world, &cfg.run, substream as u32)?;
    run.reverse = reverse;
    Ok(run)
}

/// Generates `n_runs` expert runs, shuffles them, splits 70/15/15 by run and
/// computes train-split normalization statistics.
///
/// Per-run rng streams derive deterministically from (seed, run_id), where
/// run_id is the rng substream index. Runs are attempted in waves (parallel
/// over runs, order-preserving); a failed attempt — a simulation error, or a
/// fixed-goal run that did not reach the goal (a spawn wedged against the
/// object) — is regenerated on the next free substream, so accepted run ids
/// may be sparse. Ring-goal runs that collide or time out are kept: goals on
/// the far side of the object genuinely strand the expert there, and that is
/// part of the data.
pub fn generate(cfg: &GenerateConfig) -> Result<Dataset, DataError> {
    if cfg.n_runs < 10 {
        return Err(DataError::Invalid(format!("n_runs must be at least 10, got {}", cfg.n_runs)));
    }
    cfg.run.validate().map_err(DataError::Invalid)?;
    cfg.control.validate().map_err(DataError::Invalid)?;
    let world = build_horseshoe(cfg.world);
    let n = cfg.n_runs as usize;

    let mut kept: Vec<Option<Run>> = vec![None; n];
    let mut pending: Vec<usize> = (0..n).collect();
    let mut next_substream: u64 = 0;
    let mut waves = 0;
    while !pending.is_empty() {
        waves += 1;
        if waves > 50 {
            return Err(DataError::Generation(format!(
                "{} runs still failing after 50 regeneration waves",
                pending.len()
            )));
        }
        let jobs: Vec<(usize, u64)> = pending
            .iter()
            .enumerate()
            .map(|(i, &slot)| (slot, next_substream + i as u64))
            .collect();
        next_substream += jobs.len() as u64;
        let results: Vec<(usize, u64, Result<Run, DataError>)> = jobs
            .par_iter()
            .map(|&(slot, sub)| (slot, sub, one_run(cfg, &world, sub)))
            .collect();
        pending = Vec::new();
        for (slot, sub, res) in results {
            match res {
                Ok(run) if cfg.task == Task::RingGoal || run.reached_goal => kept[slot] = Some(run),
                Ok(_) => {
                    log::warn!("run substream {sub} did not reach the fixed goal; regenerating");
                    pending.push(slot);
                }
                Err(e) => {
                    log::warn!("run substream {sub} failed ({e}); regenerating");
                    pending.push(slot);
                }
            }
        }
    }

    let mut runs: Vec<Run> = kept.into_iter().map(Option::unwrap).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    runs.shuffle(&mut shuffle_rng);

    let (n_train, n_val, _) = split_counts(n);
    let runs: Vec<DatasetRun> = runs
        .into_iter()
        .enumerate()
        .map(|(i, run)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            DatasetRun { split, run }
        })
        .collect();

    let norm = compute_norm_stats(
        runs.iter().filter(|r| r.split == Split::Train).flat_map(|r| r.run.samples.iter()),
    );
    Ok(Dataset { scanner_rays: world.scanner_rays as u32, norm, runs })
}

const MAGIC: &[u8; 4] = b"RPIL";
const VERSION: u32 = 1;

/// Sidecar path: the dataset path with ".json" appended.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

/// Writes the dataset binary and its JSON sidecar (the full generating
/// configuration). The binary layout is: magic "RPIL", u32 version, u32
/// n_runs, u32 scanner_rays, f32 mean[4], f32 std[4]; per run u32 run_id,
/// u8 split, u8 flags (bit0 reached_goal, bit1 collided, bit2 reverse),
/// u32 n_samples, then per sample f32 records [distances × rays]
/// [r,g,b × rays][goal x,y,θ][target left,right][pose x,y,θ]; trailing CRC32
/// of all preceding bytes. Everything little-endian.
pub fn save(ds: &Dataset, meta: &GenerateConfig, path: &Path) -> Result<(), DataError> {
    let mut w = CrcWriter::new(BufWriter::new(File::create(path)?));
    w.write_bytes(MAGIC)?;
    w.write_u32(VERSION)?;
    w.write_u32(ds.runs.len() as u32)?;
    w.write_u32(ds.scanner_rays)?;
    for m in ds.norm.mean {
        w.write_f32(m)?;
    }
    for s in ds.norm.std {
        w.write_f32(s)?;
    }
    for dr in &ds.runs {
        let run = &dr.run;
        w.write_u32(run.run_id)?;
        w.write_u8(dr.split as u8)?;
        let flags = (run.reached_goal as u8) | ((run.collided as u8) << 1) | ((run.reverse as u8) << 2);
        w.write_u8(flags)?;
        w.write_u32(run.samples.len() as u32)?;
        for s in &run.samples {
            debug_assert_eq!(s.scan.distances.len(), ds.scanner_rays as usize);
            for &d in &s.scan.distances {
                w.write_f32(d as f32)?;
            }
            for c in &s.scan.colors {
                for &ch in c {
                    w.write_f32(ch as f32)?;
                }
            }
            for v in [s.goal_pose.x, s.goal_pose.y, s.goal_pose.heading] {
                w.write_f32(v as f32)?;
            }
            for v in [s.target_wheels.left, s.target_wheels.right] {
                w.write_f32(v as f32)?;
            }
            for v in [s.robot_pose.x, s.robot_pose.y, s.robot_pose.heading] {
                w.write_f32(v as f32)?;
            }
        }
    }
    w.finish()?;
    let meta_json = serde_json::to_string_pretty(meta)
        .map_err(|e| DataError::Invalid(format!("sidecar serialization: {e}")))?;
    std::fs::write(sidecar_path(path), meta_json)?;
    Ok(())
}

/// Reads a dataset binary back; the sidecar is not required. Bad magic,
/// unsupported version, truncation and checksum failure are reported
/// distinctly.
pub fn load(path: &Path) -> Result<Dataset, DataError> {
    let mut r = CrcReader::new(BufReader::new(File::open(path)?));
    let mut magic = [0u8; 4];
    r.read_bytes(&mut magic).map_err(map_io)?;
    if &magic != MAGIC {
        return Err(DataError::BadMagic);
    }
    let version = r.read_u32().map_err(map_io)?;
    if version != VERSION {
        return Err(DataError::UnsupportedVersion(version));
    }
    let n_runs = r.read_u32().map_err(map_io)?;
    let rays = r.read_u32().map_err(map_io)?;
    if rays == 0 || rays > 1_000_000 {
        return Err(DataError::Invalid(format!("implausible scanner_rays {rays}")));
    }
    let mut norm = NormStats { mean: [0.0; 4], std: [0.0; 4] };
    for m in &mut norm.mean {
        *m = r.read_f32().map_err(map_io)?;
    }
    for s in &mut norm.std {
        *s = r.read_f32().map_err(map_io)?;
    }
    let mut runs = Vec::with_capacity(n_runs as usize);
    for _ in 0..n_runs {
        let run_id = r.read_u32().map_err(map_io)?;
        let split = Split::from_tag(r.read_u8().map_err(map_io)?)?;
        let flags = r.read_u8().map_err(map_io)?;
        let n_samples = r.read_u32().map_err(map_io)?;
        let mut samples = Vec::with_capacity(n_samples as usize);
        for step_i in 0..n_samples {
            let mut distances = Vec::with_capacity(rays as usize);
            for _ in 0..rays {
                distances.push(r.read_f32().map_err(map_io)? as f64);
            }
            let mut colors = Vec::with_capacity(rays as usize);
            for _ in 0..rays {
                let c = [
                    r.read_f32().map_err(map_io)? as f64,
                    r.read_f32().map_err(map_io)? as f64,
                    r.read_f32().map_err(map_io)? as f64,
                ];
                colors.push(c);
            }
            let mut f = [0.0f64; 8];
            for v in &mut f {
                *v = r.read_f32().map_err(map_io)? as f64;
            }
            samples.push(Sample {
                scan: ScanFrame { distances, colors },
                goal_pose: Pose { x: f[0], y: f[1], heading: f[2] },
                target_wheels: WheelSpeeds { left: f[3], right: f[4] },
                robot_pose: Pose { x: f[5], y: f[6], heading: f[7] },
                run_id,
                step: step_i,
            });
        }
        runs.push(DatasetRun {
            split,
            run: Run {
                run_id,
                samples,
                reached_goal: flags & 1 != 0,
                collided: flags & 2 != 0,
                reverse: flags & 4 != 0,
            },
        });
    }
    if !r.verify_trailer().map_err(map_io)? {
        return Err(DataError::ChecksumMismatch);
    }
    Ok(Dataset { scanner_rays: rays, norm, runs })
}

/// Reads the JSON sidecar written next to a dataset file.
pub fn load_meta(path: &Path) -> Result<GenerateConfig, DataError> {
    let mut buf = String::new();
    File::open(sidecar_path(path))?.read_to_string(&mut buf)?;
    serde_json::from_str(&buf).map_err(|e| DataError::Invalid(format!("sidecar: {e}")))
}

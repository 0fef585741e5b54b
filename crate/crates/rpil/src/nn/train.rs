//! Minibatch training with Adam and early stopping on validation loss.

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};

use super::loss::{loss_value_and_grad, LossKind};
use super::net::{Gradients, Mode, Network, NetworkSpec, SCAN_CHANNELS};
use super::{loss_mse, loss_smooth_l1, s, NnError, Scalar};

fn default_lr() -> f64 {
    0.001
}
fn default_batch() -> usize {
    1024
}
fn default_patience() -> usize {
    20
}
fn default_max_epochs() -> usize {
    500
}
fn default_loss() -> LossKind {
    LossKind::Mse
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

/// Training knobs. The batch default is desk-scale; the published batch size
/// (2^14) remains selectable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Epochs without a validation improvement before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            patience: default_patience(),
            max_epochs: default_max_epochs(),
            loss: default_loss(),
            seed: 0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.batch_size == 0 {
            return Err(NnError::Invalid("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(NnError::Invalid("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(NnError::Invalid("max_epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(NnError::Invalid("learning_rate must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// First and second Adam moments for every trainable array, plus the step
/// counter.
#[derive(Debug, Clone)]
pub struct AdamState<F: Scalar> {
    pub t: u64,
    m: Gradients<F>,
    v: Gradients<F>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(net: &Network<F>) -> AdamState<F> {
        AdamState { t: 0, m: Gradients::zeros(net), v: Gradients::zeros(net) }
    }
}

/// One bias-corrected Adam update over every trainable array.
pub fn adam_step<F: Scalar>(
    net: &mut Network<F>,
    grads: &Gradients<F>,
    state: &mut AdamState<F>,
    cfg: &TrainConfig,
) {
    state.t += 1;
    let lr = s::<F>(cfg.learning_rate);
    let b1 = s::<F>(cfg.beta1);
    let b2 = s::<F>(cfg.beta2);
    let eps = s::<F>(cfg.epsilon);
    let one = F::one();
    let bc1 = s::<F>(1.0 - cfg.beta1.powi(state.t as i32));
    let bc2 = s::<F>(1.0 - cfg.beta2.powi(state.t as i32));

    for slot in 0..net.n_slots() {
        let g = grads.slot(slot);
        let p = net.slot_mut(slot);
        let m = state.m.slot_mut(slot);
        let v = state.v.slot_mut(slot);
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Per-epoch losses and the epoch whose parameters were kept.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 1-based epoch with the lowest validation loss.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    /// CSV rendering: epoch, losses, and a marker column on the kept epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,best\n");
        for (i, (tr, va)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
            let best = if i + 1 == self.best_epoch { 1 } else { 0 };
            out.push_str(&format!("{},{},{},{}\n", i + 1, tr, va, best));
        }
        out
    }
}

/// Extracts one split as dense matrices: scans `(n, rays, 4)` with channels
/// (distance, r, g, b), per-sample goal poses `(n, 3)`, and target wheel
/// speeds `(n, 2)`.
pub fn design_matrices(ds: &Dataset, split: Split) -> (Array3<f32>, Array2<f32>, Array2<f32>) {
    let n = ds.split_samples(split).count();
    let rays = ds.scanner_rays as usize;
    let mut x = Array3::<f32>::zeros((n, rays, SCAN_CHANNELS));
    let mut goal = Array2::<f32>::zeros((n, 3));
    let mut y = Array2::<f32>::zeros((n, 2));
    for (i, sample) in ds.split_samples(split).enumerate() {
        assert_eq!(sample.scan.distances.len(), rays, "run {} scan width", sample.run_id);
        for w in 0..rays {
            x[[i, w, 0]] = sample.scan.distances[w] as f32;
            for ch in 0..3 {
                x[[i, w, 1 + ch]] = sample.scan.colors[w][ch] as f32;
            }
        }
        goal[[i, 0]] = sample.goal_pose.x as f32;
        goal[[i, 1]] = sample.goal_pose.y as f32;
        goal[[i, 2]] = sample.goal_pose.heading as f32;
        y[[i, 0]] = sample.target_wheels.left as f32;
        y[[i, 1]] = sample.target_wheels.right as f32;
    }
    (x, goal, y)
}

fn gather3(x: &Array3<f32>, idx: &[u32]) -> Array3<f32> {
    let (_, w, c) = x.dim();
    let mut out = Array3::<f32>::zeros((idx.len(), w, c));
    for (row, &i) in idx.iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(0), row)
            .assign(&x.index_axis(ndarray::Axis(0), i as usize));
    }
    out
}

fn gather2(x: &Array2<f32>, idx: &[u32]) -> Array2<f32> {
    let (_, c) = x.dim();
    let mut out = Array2::<f32>::zeros((idx.len(), c));
    for (row, &i) in idx.iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(0), row)
            .assign(&x.index_axis(ndarray::Axis(0), i as usize));
    }
    out
}

fn batch_loss(kind: LossKind, pred: &Array2<f32>, target: &Array2<f32>) -> f64 {
    match kind {
        LossKind::Mse => loss_mse(pred, target),
        LossKind::SmoothL1 => loss_smooth_l1(pred, target),
    }
}

/// Mean loss of eval-mode predictions over a whole split, batched.
fn eval_loss(
    net: &Network<f32>,
    x: &Array3<f32>,
    goal: Option<&Array2<f32>>,
    y: &Array2<f32>,
    kind: LossKind,
    batch: usize,
) -> f64 {
    let n = x.dim().0;
    let mut sum = 0.0f64;
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        let xb = x.slice(ndarray::s![start..end, .., ..]).to_owned();
        let gb = goal.map(|g| g.slice(ndarray::s![start..end, ..]).to_owned());
        let yb = y.slice(ndarray::s![start..end, ..]).to_owned();
        let pred = net.forward(&xb, gb.as_ref(), Mode::Eval, None);
        sum += batch_loss(kind, &pred, &yb) * (end - start) as f64;
        start = end;
    }
    sum / n as f64
}

/// Trains a network on the train split with early stopping on the validation
/// split. Returns the parameters of the best validation epoch and the loss
/// history. Fully determined by `cfg.seed`.
pub fn train(
    ds: &Dataset,
    spec: NetworkSpec,
    cfg: &TrainConfig,
) -> Result<(Network<f32>, TrainHistory), NnError> {
    cfg.validate()?;
    spec.validate()?;
    if ds.scanner_rays as usize != spec.rays {
        return Err(NnError::Invalid(format!(
            "dataset has {} rays but the network expects {}",
            ds.scanner_rays, spec.rays
        )));
    }
    let (x_tr, g_tr, y_tr) = design_matrices(ds, Split::Train);
    let (x_va, g_va, y_va) = design_matrices(ds, Split::Val);
    if x_tr.dim().0 == 0 || x_va.dim().0 == 0 {
        return Err(NnError::Invalid("train and validation splits must be non-empty".into()));
    }
    let goal_in = spec.variant.goal_input();
    let g_tr = goal_in.then_some(&g_tr);
    let g_va = goal_in.then_some(&g_va);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net: Network<f32> = Network::new(spec, &ds.norm, &mut rng);
    let mut adam = AdamState::new(&net);

    let n = x_tr.dim().0;
    let mut order: Vec<u32> = (0..n as u32).collect();
    let mut history = TrainHistory { train_loss: vec![], val_loss: vec![], best_epoch: 0 };
    let mut best_val = f64::INFINITY;
    let mut best_net = net.clone();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut tr_sum = 0.0f64;
        for (batch_i, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let xb = gather3(&x_tr, chunk);
            let gb = g_tr.map(|g| gather2(g, chunk));
            let yb = gather2(&y_tr, chunk);
            let (pred, cache) = net.forward_cached(&xb, gb.as_ref(), Mode::Train, Some(&mut rng));
            let (value, d_pred) = loss_value_and_grad(cfg.loss, &pred, &yb);
            if !value.is_finite() {
                return Err(NnError::Numeric { epoch, batch: batch_i });
            }
            let grads = net.backward(&cache, &d_pred);
            adam_step(&mut net, &grads, &mut adam, cfg);
            tr_sum += value * chunk.len() as f64;
        }
        history.train_loss.push(tr_sum / n as f64);

        let val = eval_loss(&net, &x_va, g_va, &y_va, cfg.loss, cfg.batch_size);
        if !val.is_finite() {
            return Err(NnError::Numeric { epoch, batch: 0 });
        }
        history.val_loss.push(val);
        if val < best_val {
            best_val = val;
            history.best_epoch = epoch;
            best_net = net.clone();
        }
        log::debug!("epoch {epoch}: train {} val {val}", history.train_loss[epoch - 1]);
        if epoch - history.best_epoch >= cfg.patience {
            break;
        }
    }
    Ok((best_net, history))
}

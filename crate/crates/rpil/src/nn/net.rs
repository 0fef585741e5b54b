//! Network variants, parameter containers, and the forward/backward passes.

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::NormStats;
use crate::geom::{Pose, WheelSpeeds};
use crate::sim::{ScanFrame, SCANNER_RAYS};

use super::layers::{
    conv_backward, conv_forward, conv_out_width, dense_backward, dense_forward, dropout_mask,
    maxpool_backward, maxpool_forward, relu_bwd, relu_fwd, standardize_forward,
};
use super::{s as sc, NnError, Scalar};

/// Scan channels: one distance plus three colour components per ray.
pub const SCAN_CHANNELS: usize = 4;

/// Dropout probability of the dropout variants.
pub const DROPOUT_P: f64 = 0.5;

/// The five architecture variants. All share the three-conv, three-dense
/// skeleton; they differ in channel counts, the pooling stage, dropout after
/// the first two dense layers, and whether the goal pose is concatenated to
/// the flattened features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    Maxpool,
    BaselineDropout,
    MaxpoolDropout,
    Task2,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::Maxpool,
        Variant::BaselineDropout,
        Variant::MaxpoolDropout,
        Variant::Task2,
    ];

    pub fn uses_maxpool(self) -> bool {
        matches!(self, Variant::Maxpool | Variant::MaxpoolDropout | Variant::Task2)
    }

    pub fn uses_dropout(self) -> bool {
        matches!(self, Variant::BaselineDropout | Variant::MaxpoolDropout | Variant::Task2)
    }

    /// True when the goal pose is fed to the dense stack (the moving-goal
    /// task; the fixed-goal networks must infer everything from the scan).
    pub fn goal_input(self) -> bool {
        matches!(self, Variant::Task2)
    }

    pub fn tag(self) -> u8 {
        match self {
            Variant::Baseline => 0,
            Variant::Maxpool => 1,
            Variant::BaselineDropout => 2,
            Variant::MaxpoolDropout => 3,
            Variant::Task2 => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Maxpool => "maxpool",
            Variant::BaselineDropout => "baseline_dropout",
            Variant::MaxpoolDropout => "maxpool_dropout",
            Variant::Task2 => "task2",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(v: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|k| k.name() == v)
            .ok_or_else(|| format!("unknown variant {v:?} (expected one of baseline, maxpool, baseline_dropout, maxpool_dropout, task2)"))
    }
}

/// Architecture description: variant plus the knobs that shrink it for
/// gradient checking. `full` reproduces the published tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub variant: Variant,
    /// Scan width fed to the first conv.
    pub rays: usize,
    /// Output channels of the three conv layers.
    pub conv_channels: [usize; 3],
    /// Width of the two hidden dense layers.
    pub hidden: usize,
}

/// Kernel size, stride, and circular padding of each conv stage.
const CONV_GEOM: [(usize, usize, usize); 3] = [(5, 2, 2), (5, 2, 2), (5, 1, 2)];
/// Max pooling geometry (kernel, stride, circular padding).
const POOL_GEOM: (usize, usize, usize) = (3, 3, 1);

impl NetworkSpec {
    /// The published architecture for a variant: 180 rays, 16/32/32 channels
    /// for the baselines and 32/96/96 with pooling, 128-wide dense layers.
    pub fn full(variant: Variant) -> NetworkSpec {
        let conv_channels = if variant.uses_maxpool() { [32, 96, 96] } else { [16, 32, 32] };
        NetworkSpec { variant, rays: SCANNER_RAYS, conv_channels, hidden: 128 }
    }

    /// A shrunken network for finite-difference gradient checks: 8 rays and
    /// a handful of channels keep the parameter count in the hundreds.
    pub fn tiny(variant: Variant) -> NetworkSpec {
        NetworkSpec { variant, rays: 8, conv_channels: [3, 4, 4], hidden: 5 }
    }

    /// Widths entering each conv stage, the pool input width (equal to the
    /// conv2 output), and the final feature width.
    fn width_chain(&self) -> ([usize; 3], usize) {
        let w1 = conv_out_width(self.rays, CONV_GEOM[0].0, CONV_GEOM[0].1, CONV_GEOM[0].2);
        let w2 = conv_out_width(w1, CONV_GEOM[1].0, CONV_GEOM[1].1, CONV_GEOM[1].2);
        let w3_in = if self.variant.uses_maxpool() {
            conv_out_width(w2, POOL_GEOM.0, POOL_GEOM.1, POOL_GEOM.2)
        } else {
            w2
        };
        let w3 = conv_out_width(w3_in, CONV_GEOM[2].0, CONV_GEOM[2].1, CONV_GEOM[2].2);
        ([w1, w2, w3_in], w3)
    }

    /// Flattened feature count after the conv stack.
    pub fn flatten_width(&self) -> usize {
        let (_, w3) = self.width_chain();
        w3 * self.conv_channels[2]
    }

    /// Input width of the first dense layer (flattened features plus the
    /// goal pose when the variant takes one).
    pub fn fc1_input(&self) -> usize {
        self.flatten_width() + if self.variant.goal_input() { 3 } else { 0 }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.rays < 2 {
            return Err(NnError::Invalid(format!("need at least 2 rays, got {}", self.rays)));
        }
        if self.conv_channels.contains(&0) || self.hidden == 0 {
            return Err(NnError::Invalid("zero-width layer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<F: Scalar> {
    /// Kernels, `(c_out, c_in, k)`.
    pub weight: Array3<F>,
    pub bias: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<F: Scalar> {
    /// `(out, in)` so a batch multiplies by the transpose.
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

/// Whether dropout is live (training) or bypassed (evaluation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A network: frozen standardizer statistics, the learned per-channel affine,
/// and the conv/dense parameter arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<F: Scalar> {
    pub spec: NetworkSpec,
    /// Frozen per-channel train-set statistics.
    pub mean: Array1<F>,
    pub std: Array1<F>,
    /// Learned per-channel affine applied after standardization.
    pub alpha: Array1<F>,
    pub beta: Array1<F>,
    pub convs: Vec<ConvParams<F>>,
    pub denses: Vec<DenseParams<F>>,
}

/// Gradients for every trainable array of a [`Network`], in the same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F: Scalar> {
    pub alpha: Array1<F>,
    pub beta: Array1<F>,
    pub convs: Vec<(Array3<F>, Array1<F>)>,
    pub denses: Vec<(Array2<F>, Array1<F>)>,
}

/// Intermediate activations needed by the backward pass.
pub(crate) struct Cache<F: Scalar> {
    mode: Mode,
    /// Normalized input before the affine, for the affine gradients.
    y_norm: Array3<F>,
    /// Input to each conv layer (affine output, then post-ReLU/pool stages).
    conv_in: Vec<Array3<F>>,
    /// Pre-ReLU output of each conv layer.
    conv_pre: Vec<Array3<F>>,
    /// Pool bookkeeping when the variant pools: input width and argmax map.
    pool: Option<(usize, Array3<u32>)>,
    /// Input to each dense layer (flattened features, then post-dropout).
    dense_in: Vec<Array2<F>>,
    /// Pre-ReLU output of the two hidden dense layers.
    dense_pre: Vec<Array2<F>>,
    /// Dropout masks of the two hidden layers when live.
    drop: [Option<Array2<F>>; 2],
}

impl<F: Scalar> Network<F> {
    /// Kaiming-uniform initialization (`±√(6/fan_in)`) for conv and dense
    /// weights drawn in declaration order, zero biases, identity affine.
    pub fn new(spec: NetworkSpec, norm: &NormStats, rng: &mut ChaCha8Rng) -> Network<F> {
        spec.validate().expect("invalid network spec");
        let mut kaiming = |shape_fan_in: usize, n: usize| -> Vec<F> {
            let bound = (6.0 / shape_fan_in as f64).sqrt();
            (0..n).map(|_| sc::<F>(rng.random_range(-bound..bound))).collect()
        };

        let mut convs = Vec::with_capacity(3);
        let mut c_in = SCAN_CHANNELS;
        for (i, &(k, _, _)) in CONV_GEOM.iter().enumerate() {
            let c_out = spec.conv_channels[i];
            let weight =
                Array3::from_shape_vec((c_out, c_in, k), kaiming(c_in * k, c_out * c_in * k))
                    .unwrap();
            convs.push(ConvParams { weight, bias: Array1::zeros(c_out) });
            c_in = c_out;
        }

        let mut denses = Vec::with_capacity(3);
        let widths = [spec.fc1_input(), spec.hidden, spec.hidden];
        let outs = [spec.hidden, spec.hidden, 2];
        for i in 0..3 {
            let weight =
                Array2::from_shape_vec((outs[i], widths[i]), kaiming(widths[i], outs[i] * widths[i]))
                    .unwrap();
            denses.push(DenseParams { weight, bias: Array1::zeros(outs[i]) });
        }

        Network {
            spec,
            mean: norm.mean.iter().map(|&v| sc::<F>(v as f64)).collect(),
            std: norm.std.iter().map(|&v| sc::<F>(v as f64)).collect(),
            alpha: Array1::from_elem(SCAN_CHANNELS, F::one()),
            beta: Array1::zeros(SCAN_CHANNELS),
            convs,
            denses,
        }
    }

    /// Forward pass over a channels-last batch `(b, rays, 4)`. `goal` is the
    /// per-sample `(x, y, heading)` batch, present iff the variant takes one.
    /// Train mode draws dropout masks from `rng` for the dropout variants.
    pub fn forward(
        &self,
        x: &Array3<F>,
        goal: Option<&Array2<F>>,
        mode: Mode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Array2<F> {
        self.forward_cached(x, goal, mode, rng).0
    }

    pub(crate) fn forward_cached(
        &self,
        x: &Array3<F>,
        goal: Option<&Array2<F>>,
        mode: Mode,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Array2<F>, Cache<F>) {
        let (b, w, c) = x.dim();
        assert_eq!(w, self.spec.rays, "scan width {w} but network expects {}", self.spec.rays);
        assert_eq!(c, SCAN_CHANNELS, "scan must have {SCAN_CHANNELS} channels");
        match (self.spec.variant.goal_input(), goal) {
            (true, None) => panic!("variant {} requires a goal input", self.spec.variant),
            (false, Some(_)) => panic!("variant {} takes no goal input", self.spec.variant),
            (true, Some(g)) => assert_eq!(g.dim(), (b, 3), "goal batch shape mismatch"),
            (false, None) => {}
        }

        let (y_norm, z) = standardize_forward(x, &self.mean, &self.std, &self.alpha, &self.beta);

        let mut conv_in = Vec::with_capacity(3);
        let mut conv_pre = Vec::with_capacity(3);
        let mut pool = None;
        let mut cur = z;
        for (i, conv) in self.convs.iter().enumerate() {
            let (_, stride, pad) = CONV_GEOM[i];
            conv_in.push(cur.clone());
            let pre = conv_forward(&cur, &conv.weight, &conv.bias, stride, pad);
            let mut post = relu_fwd(&pre);
            conv_pre.push(pre);
            if i == 1 && self.spec.variant.uses_maxpool() {
                let (k, s, p) = POOL_GEOM;
                let (pooled, argmax) = maxpool_forward(&post, k, s, p);
                pool = Some((post.dim().1, argmax));
                post = pooled;
            }
            cur = post;
        }

        let (b2, wf, cf) = cur.dim();
        let flat = cur.into_shape_with_order((b2, wf * cf)).unwrap();
        let flat = match goal {
            Some(g) => {
                let mut joined = Array2::<F>::zeros((b, wf * cf + 3));
                joined.slice_mut(s![.., ..wf * cf]).assign(&flat);
                joined.slice_mut(s![.., wf * cf..]).assign(g);
                joined
            }
            None => flat,
        };

        let dropout_live = mode == Mode::Train && self.spec.variant.uses_dropout();
        let mut dense_in = Vec::with_capacity(3);
        let mut dense_pre = Vec::with_capacity(2);
        let mut drop: [Option<Array2<F>>; 2] = [None, None];
        let mut cur = flat;
        for (i, slot) in drop.iter_mut().enumerate() {
            dense_in.push(cur.clone());
            let pre = dense_forward(&cur, &self.denses[i].weight, &self.denses[i].bias);
            let mut act = relu_fwd(&pre);
            dense_pre.push(pre);
            if dropout_live {
                let r = rng
                    .as_deref_mut()
                    .expect("train-mode forward of a dropout variant needs an rng");
                let mask = dropout_mask::<F>(r, act.dim().0, act.dim().1, DROPOUT_P);
                act = &act * &mask;
                *slot = Some(mask);
            }
            cur = act;
        }
        dense_in.push(cur.clone());
        let out = dense_forward(&cur, &self.denses[2].weight, &self.denses[2].bias);

        (out, Cache { mode, y_norm, conv_in, conv_pre, pool, dense_in, dense_pre, drop })
    }

    /// Backpropagates a prediction gradient through the cached activations,
    /// returning gradients for every trainable array.
    pub(crate) fn backward(&self, cache: &Cache<F>, d_pred: &Array2<F>) -> Gradients<F> {
        let _ = cache.mode;
        let mut grads = Gradients::zeros(self);

        // Dense stack, last layer first.
        let (mut d_cur, d_w, d_b) = dense_backward(&cache.dense_in[2], &self.denses[2].weight, d_pred);
        grads.denses[2] = (d_w, d_b);
        for i in (0..2).rev() {
            if let Some(mask) = &cache.drop[i] {
                d_cur = &d_cur * mask;
            }
            let d_pre = relu_bwd(&cache.dense_pre[i], &d_cur);
            let (d_in, d_w, d_b) = dense_backward(&cache.dense_in[i], &self.denses[i].weight, &d_pre);
            grads.denses[i] = (d_w, d_b);
            d_cur = d_in;
        }

        // Split off the goal columns and restore the conv-output shape.
        let flat_w = self.spec.flatten_width();
        let d_flat = d_cur.slice(s![.., ..flat_w]).to_owned();
        let (_, w3) = self.spec.width_chain();
        let c3 = self.spec.conv_channels[2];
        let b = d_flat.dim().0;
        let mut d_conv = d_flat.into_shape_with_order((b, w3, c3)).unwrap();

        // Conv stack, last layer first; the pool sits after conv2's ReLU.
        for i in (0..3).rev() {
            let (_, stride, pad) = CONV_GEOM[i];
            let d_pre = relu_bwd(&cache.conv_pre[i], &d_conv);
            let (d_in, d_w, d_b) =
                conv_backward(&cache.conv_in[i], &self.convs[i].weight, stride, pad, &d_pre);
            grads.convs[i] = (d_w, d_b);
            d_conv = d_in;
            if i == 2 {
                if let Some((pool_w, argmax)) = &cache.pool {
                    d_conv = maxpool_backward(*pool_w, argmax, &d_conv);
                }
            }
        }

        // Affine: z = alpha·y + beta per channel.
        let d_z = d_conv;
        grads.alpha = (&d_z * &cache.y_norm).sum_axis(Axis(0)).sum_axis(Axis(0));
        grads.beta = d_z.sum_axis(Axis(0)).sum_axis(Axis(0));
        grads
    }

    /// Eval-mode convenience for the closed loop: one scan (plus goal for the
    /// goal-input variant) to one wheel-speed command.
    pub fn forward_scan(&self, scan: &ScanFrame, goal: Option<&Pose>) -> WheelSpeeds {
        let w = scan.distances.len();
        let mut x = Array3::<F>::zeros((1, w, SCAN_CHANNELS));
        for i in 0..w {
            x[[0, i, 0]] = sc::<F>(scan.distances[i]);
            for ch in 0..3 {
                x[[0, i, 1 + ch]] = sc::<F>(scan.colors[i][ch]);
            }
        }
        let g = goal.map(|g| {
            Array2::from_shape_vec((1, 3), vec![sc::<F>(g.x), sc::<F>(g.y), sc::<F>(g.heading)])
                .unwrap()
        });
        let out = self.forward(&x, g.as_ref(), Mode::Eval, None);
        WheelSpeeds { left: out[[0, 0]].to_f64().unwrap(), right: out[[0, 1]].to_f64().unwrap() }
    }

    /// Number of trainable parameter arrays.
    pub(crate) fn n_slots(&self) -> usize {
        2 + 2 * self.convs.len() + 2 * self.denses.len()
    }

    /// Mutable view of one trainable array as a flat slice. Slot order:
    /// alpha, beta, then each conv's weight and bias, then each dense's.
    pub(crate) fn slot_mut(&mut self, slot: usize) -> &mut [F] {
        match slot {
            0 => self.alpha.as_slice_mut().unwrap(),
            1 => self.beta.as_slice_mut().unwrap(),
            _ => {
                let i = slot - 2;
                if i < 2 * self.convs.len() {
                    let c = &mut self.convs[i / 2];
                    if i.is_multiple_of(2) {
                        c.weight.as_slice_mut().unwrap()
                    } else {
                        c.bias.as_slice_mut().unwrap()
                    }
                } else {
                    let j = i - 2 * self.convs.len();
                    let d = &mut self.denses[j / 2];
                    if j.is_multiple_of(2) {
                        d.weight.as_slice_mut().unwrap()
                    } else {
                        d.bias.as_slice_mut().unwrap()
                    }
                }
            }
        }
    }
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros(net: &Network<F>) -> Gradients<F> {
        Gradients {
            alpha: Array1::zeros(net.alpha.len()),
            beta: Array1::zeros(net.beta.len()),
            convs: net
                .convs
                .iter()
                .map(|c| (Array3::zeros(c.weight.dim()), Array1::zeros(c.bias.len())))
                .collect(),
            denses: net
                .denses
                .iter()
                .map(|d| (Array2::zeros(d.weight.dim()), Array1::zeros(d.bias.len())))
                .collect(),
        }
    }

    pub(crate) fn slot(&self, slot: usize) -> &[F] {
        match slot {
            0 => self.alpha.as_slice().unwrap(),
            1 => self.beta.as_slice().unwrap(),
            _ => {
                let i = slot - 2;
                if i < 2 * self.convs.len() {
                    let c = &self.convs[i / 2];
                    if i.is_multiple_of(2) {
                        c.0.as_slice().unwrap()
                    } else {
                        c.1.as_slice().unwrap()
                    }
                } else {
                    let j = i - 2 * self.convs.len();
                    let d = &self.denses[j / 2];
                    if j.is_multiple_of(2) {
                        d.0.as_slice().unwrap()
                    } else {
                        d.1.as_slice().unwrap()
                    }
                }
            }
        }
    }

    pub(crate) fn slot_mut(&mut self, slot: usize) -> &mut [F] {
        match slot {
            0 => self.alpha.as_slice_mut().unwrap(),
            1 => self.beta.as_slice_mut().unwrap(),
            _ => {
                let i = slot - 2;
                if i < 2 * self.convs.len() {
                    let c = &mut self.convs[i / 2];
                    if i.is_multiple_of(2) {
                        c.0.as_slice_mut().unwrap()
                    } else {
                        c.1.as_slice_mut().unwrap()
                    }
                } else {
                    let j = i - 2 * self.convs.len();
                    let d = &mut self.denses[j / 2];
                    if j.is_multiple_of(2) {
                        d.0.as_slice_mut().unwrap()
                    } else {
                        d.1.as_slice_mut().unwrap()
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::layers::{conv_forward, roll_width};
    use super::super::loss::{loss_value_and_grad, LossKind};
    use super::*;
    use rand::SeedableRng;

    fn test_norm() -> NormStats {
        NormStats { mean: [0.9, 0.2, 0.2, 0.2], std: [0.5, 0.3, 0.3, 0.3] }
    }

    fn rand_batch(b: usize, rays: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn((b, rays, SCAN_CHANNELS), || rng.random_range(0.0..1.8))
    }

    #[test]
    fn shape_chains_match_tables() {
        let baseline = NetworkSpec::full(Variant::Baseline);
        let ([w1, w2, w3_in], w3) = baseline.width_chain();
        assert_eq!((w1, w2, w3_in, w3), (90, 45, 45, 45));
        assert_eq!(baseline.flatten_width(), 1440);
        assert_eq!(baseline.fc1_input(), 1440);

        let maxpool = NetworkSpec::full(Variant::Maxpool);
        let ([w1, w2, w3_in], w3) = maxpool.width_chain();
        assert_eq!((w1, w2, w3_in, w3), (90, 45, 15, 15));
        assert_eq!(maxpool.flatten_width(), 1440);

        assert_eq!(NetworkSpec::full(Variant::MaxpoolDropout).flatten_width(), 1440);
        assert_eq!(NetworkSpec::full(Variant::Task2).fc1_input(), 1443);
    }

    #[test]
    fn zeroed_network_outputs_zero_for_any_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net: Network<f64> =
            Network::new(NetworkSpec::tiny(Variant::Baseline), &test_norm(), &mut rng);
        for slot in 0..net.n_slots() {
            net.slot_mut(slot).fill(0.0);
        }
        let x = rand_batch(3, 8, 2);
        let out = net.forward(&x, None, Mode::Eval, None);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_init_full_baseline_gives_two_finite_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net: Network<f32> =
            Network::new(NetworkSpec::full(Variant::Baseline), &test_norm(), &mut rng);
        let x = rand_batch(1, 180, 6).mapv(|v| v as f32);
        let out = net.forward(&x, None, Mode::Eval, None);
        assert_eq!(out.dim(), (1, 2));
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn eval_mode_is_deterministic_for_dropout_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net: Network<f64> =
            Network::new(NetworkSpec::tiny(Variant::MaxpoolDropout), &test_norm(), &mut rng);
        let x = rand_batch(2, 8, 8);
        let g = Array2::zeros((2, 3));
        let g = if net.spec.variant.goal_input() { Some(&g) } else { None };
        let a = net.forward(&x, g, Mode::Eval, None);
        let b = net.forward(&x, g, Mode::Eval, None);
        assert_eq!(a, b);
    }

    #[test]
    fn conv_stack_shift_equivariance_on_full_widths() {
        // Stride-2 stages: rolling the input by 2 rolls conv1's output by 1,
        // and rolling by 4 rolls conv2's output by 1, bit-exactly. The
        // standardizer is pointwise, so it commutes with the roll.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net: Network<f64> =
            Network::new(NetworkSpec::full(Variant::Baseline), &test_norm(), &mut rng);
        let x = rand_batch(1, 180, 10);
        let run_convs = |x: &Array3<f64>| {
            let (_, z) = standardize_forward(x, &net.mean, &net.std, &net.alpha, &net.beta);
            let c1 = relu_fwd(&conv_forward(&z, &net.convs[0].weight, &net.convs[0].bias, 2, 2));
            let c2 = relu_fwd(&conv_forward(&c1, &net.convs[1].weight, &net.convs[1].bias, 2, 2));
            (c1, c2)
        };
        let (c1, c2) = run_convs(&x);
        let (c1s, _) = run_convs(&roll_width(&x, 2));
        assert_eq!(c1s, roll_width(&c1, 1));
        let (_, c2s) = run_convs(&roll_width(&x, 4));
        assert_eq!(c2s, roll_width(&c2, 1));
    }

    #[test]
    fn train_mode_dropout_expectation_matches_eval() {
        // Without dropout layers the two modes are the same computation.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let plain: Network<f64> =
            Network::new(NetworkSpec::tiny(Variant::Baseline), &test_norm(), &mut rng);
        let x = rand_batch(2, 8, 12);
        let ev = plain.forward(&x, None, Mode::Eval, None);
        let tr = plain.forward(&x, None, Mode::Train, Some(&mut rng));
        assert_eq!(ev, tr);

        let mut net: Network<f64> =
            Network::new(NetworkSpec::tiny(Variant::BaselineDropout), &test_norm(), &mut rng);
        // Nudge the zero biases so no dense row is dead; a dead path would
        // make the output constant and every check below vacuous.
        for slot in 0..net.n_slots() {
            for p in net.slot_mut(slot).iter_mut() {
                *p += rng.random_range(-0.05..0.05);
            }
        }
        let x = rand_batch(1, 8, 12);
        let eval = net.forward(&x, None, Mode::Eval, None)[[0, 0]];

        // Masks come from the rng state: same seed, same output.
        let mut ra = ChaCha8Rng::seed_from_u64(4);
        let mut rb = ChaCha8Rng::seed_from_u64(4);
        let first = net.forward(&x, None, Mode::Train, Some(&mut ra))[[0, 0]];
        assert_eq!(first, net.forward(&x, None, Mode::Train, Some(&mut rb))[[0, 0]]);

        let n = 10_000;
        let mut draws = Vec::with_capacity(n);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..n {
            draws.push(net.forward(&x, None, Mode::Train, Some(&mut rng))[[0, 0]]);
        }
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!(se > 0.0, "dropout must perturb the output for this check to bind");
        // The kept-unit scaling makes each dropout layer mean-preserving, but
        // the ReLU between them bends the overall mean a little, so the band
        // is loose. A wrong keep scale lands far outside it.
        let band = 0.12 * (eval.abs() + 0.1);
        assert!((mean - eval).abs() <= band, "mean {mean} vs eval {eval}, band {band}");
    }

    #[test]
    #[should_panic(expected = "requires a goal input")]
    fn goal_variant_rejects_missing_goal() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let net: Network<f64> =
            Network::new(NetworkSpec::tiny(Variant::Task2), &test_norm(), &mut rng);
        let x = rand_batch(1, 8, 15);
        let _ = net.forward(&x, None, Mode::Eval, None);
    }

    #[test]
    fn goal_input_changes_the_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let net: Network<f64> =
            Network::new(NetworkSpec::tiny(Variant::Task2), &test_norm(), &mut rng);
        let x = rand_batch(1, 8, 17);
        let g1 = Array2::from_shape_vec((1, 3), vec![0.5, 0.0, 0.0]).unwrap();
        let g2 = Array2::from_shape_vec((1, 3), vec![-0.5, 0.3, 1.0]).unwrap();
        let a = net.forward(&x, Some(&g1), Mode::Eval, None);
        let b = net.forward(&x, Some(&g2), Mode::Eval, None);
        assert_ne!(a, b);
    }

    #[test]
    fn matching_prediction_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let net: Network<f64> =
            Network::new(NetworkSpec::tiny(Variant::Baseline), &test_norm(), &mut rng);
        let x = rand_batch(3, 8, 19);
        let (pred, cache) = net.forward_cached(&x, None, Mode::Eval, None);
        let (value, d_pred) = loss_value_and_grad(LossKind::Mse, &pred, &pred);
        assert_eq!(value, 0.0);
        let grads = net.backward(&cache, &d_pred);
        for slot in 0..net.n_slots() {
            assert!(grads.slot(slot).iter().all(|&g| g == 0.0), "slot {slot} not zero");
        }
    }

    #[test]
    fn final_bias_gradient_is_mean_residual_scaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let net: Network<f64> =
            Network::new(NetworkSpec::tiny(Variant::Baseline), &test_norm(), &mut rng);
        let x = rand_batch(4, 8, 21);
        let (pred, cache) = net.forward_cached(&x, None, Mode::Eval, None);
        let target = pred.mapv(|v| v + 0.25) - Array2::from_shape_fn((4, 2), |(i, j)| {
            0.1 * (i as f64) + 0.05 * (j as f64)
        });
        let (_, d_pred) = loss_value_and_grad(LossKind::Mse, &pred, &target);
        let grads = net.backward(&cache, &d_pred);
        let n = pred.len() as f64;
        for j in 0..2 {
            let hand: f64 =
                (0..4).map(|i| 2.0 * (pred[[i, j]] - target[[i, j]]) / n).sum();
            assert!((grads.denses[2].1[j] - hand).abs() < 1e-15);
        }
    }
}

//! Layer kernels. The batched internal forms take channels-last activations
//! `(batch, width, channels)`; the public single-sample forms take the
//! channels-first shapes the architecture tables are written in.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Scalar;

/// Output width of a kernel of size `k` sliding over `w` inputs with the
/// given stride and symmetric circular padding.
pub fn conv_out_width(w: usize, k: usize, stride: usize, pad: usize) -> usize {
    (w + 2 * pad - k) / stride + 1
}

/// Wraps a possibly negative padded index onto the ring of `w` samples.
fn wrap(i: isize, w: usize) -> usize {
    i.rem_euclid(w as isize) as usize
}

/// Gathers the padded convolution windows of `x` into a patch matrix with one
/// row per `(batch, output position)` and one column per `(tap, channel)`.
fn im2col<F: Scalar>(x: &Array3<F>, k: usize, stride: usize, pad: usize) -> Array2<F> {
    let (b, w, c) = x.dim();
    let w_out = conv_out_width(w, k, stride, pad);
    let mut p = Array2::<F>::zeros((b * w_out, k * c));
    for bi in 0..b {
        for j in 0..w_out {
            let row = bi * w_out + j;
            let base = (j * stride) as isize - pad as isize;
            for kk in 0..k {
                let src = wrap(base + kk as isize, w);
                for ci in 0..c {
                    p[[row, kk * c + ci]] = x[[bi, src, ci]];
                }
            }
        }
    }
    p
}

/// Repacks `(c_out, c_in, k)` kernel weights into the `(k·c_in, c_out)`
/// matrix that multiplies the patch matrix.
fn weight_matrix<F: Scalar>(w: &Array3<F>) -> Array2<F> {
    let (c_out, c_in, k) = w.dim();
    let mut wm = Array2::<F>::zeros((k * c_in, c_out));
    for co in 0..c_out {
        for ci in 0..c_in {
            for kk in 0..k {
                wm[[kk * c_in + ci, co]] = w[[co, ci, kk]];
            }
        }
    }
    wm
}

/// Circular 1-D cross-correlation over a batch: `(b, w, c_in)` with kernels
/// `(c_out, c_in, k)` gives `(b, w', c_out)`. Widths smaller than the kernel
/// simply wrap more than once.
pub(crate) fn conv_forward<F: Scalar>(
    x: &Array3<F>,
    weight: &Array3<F>,
    bias: &Array1<F>,
    stride: usize,
    pad: usize,
) -> Array3<F> {
    let (b, _, c_in) = x.dim();
    let (c_out, c_in_w, k) = weight.dim();
    assert_eq!(c_in, c_in_w, "conv input channels {c_in} but kernel expects {c_in_w}");
    assert_eq!(bias.len(), c_out, "conv bias length mismatch");
    assert!(stride > 0, "conv stride must be positive");
    let w_out = conv_out_width(x.dim().1, k, stride, pad);
    let p = im2col(x, k, stride, pad);
    let wm = weight_matrix(weight);
    let mut out = p.dot(&wm).into_shape_with_order((b, w_out, c_out)).unwrap();
    out += bias;
    out
}

/// Gradients of [`conv_forward`] w.r.t. input, weights, and bias. The input
/// gradient scatters patch gradients back through the same wrapped gather, so
/// contributions that crossed the circular seam accumulate correctly.
pub(crate) fn conv_backward<F: Scalar>(
    x: &Array3<F>,
    weight: &Array3<F>,
    stride: usize,
    pad: usize,
    d_out: &Array3<F>,
) -> (Array3<F>, Array3<F>, Array1<F>) {
    let (b, w, c_in) = x.dim();
    let (c_out, _, k) = weight.dim();
    let w_out = d_out.dim().1;
    assert_eq!(d_out.dim(), (b, conv_out_width(w, k, stride, pad), c_out));

    let d_flat = d_out.to_shape((b * w_out, c_out)).unwrap();
    let p = im2col(x, k, stride, pad);
    let d_wm = p.t().dot(&d_flat);
    let mut d_weight = Array3::<F>::zeros((c_out, c_in, k));
    for co in 0..c_out {
        for ci in 0..c_in {
            for kk in 0..k {
                d_weight[[co, ci, kk]] = d_wm[[kk * c_in + ci, co]];
            }
        }
    }
    let d_bias = d_flat.sum_axis(Axis(0));

    let wm = weight_matrix(weight);
    let d_p = d_flat.dot(&wm.t());
    let mut d_x = Array3::<F>::zeros((b, w, c_in));
    for bi in 0..b {
        for j in 0..w_out {
            let row = bi * w_out + j;
            let base = (j * stride) as isize - pad as isize;
            for kk in 0..k {
                let src = wrap(base + kk as isize, w);
                for ci in 0..c_in {
                    d_x[[bi, src, ci]] += d_p[[row, kk * c_in + ci]];
                }
            }
        }
    }
    (d_x, d_weight, d_bias)
}

/// Circular max pooling over a batch. Returns the pooled activations and the
/// absolute source index each output took its value from; ties keep the first
/// index in window order.
pub(crate) fn maxpool_forward<F: Scalar>(
    x: &Array3<F>,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Array3<F>, Array3<u32>) {
    let (b, w, c) = x.dim();
    assert!(k > 0 && stride > 0);
    let w_out = conv_out_width(w, k, stride, pad);
    let mut out = Array3::<F>::zeros((b, w_out, c));
    let mut arg = Array3::<u32>::zeros((b, w_out, c));
    for bi in 0..b {
        for j in 0..w_out {
            let base = (j * stride) as isize - pad as isize;
            for kk in 0..k {
                let src = wrap(base + kk as isize, w);
                for ci in 0..c {
                    let v = x[[bi, src, ci]];
                    if kk == 0 || v > out[[bi, j, ci]] {
                        out[[bi, j, ci]] = v;
                        arg[[bi, j, ci]] = src as u32;
                    }
                }
            }
        }
    }
    (out, arg)
}

/// Routes pooled-output gradients back to the argmax positions.
pub(crate) fn maxpool_backward<F: Scalar>(
    in_width: usize,
    argmax: &Array3<u32>,
    d_out: &Array3<F>,
) -> Array3<F> {
    let (b, w_out, c) = d_out.dim();
    assert_eq!(argmax.dim(), (b, w_out, c));
    let mut d_x = Array3::<F>::zeros((b, in_width, c));
    for bi in 0..b {
        for j in 0..w_out {
            for ci in 0..c {
                let src = argmax[[bi, j, ci]] as usize;
                d_x[[bi, src, ci]] += d_out[[bi, j, ci]];
            }
        }
    }
    d_x
}

/// Fully connected layer over a batch: `(b, in) · (out, in)ᵀ + bias`.
pub(crate) fn dense_forward<F: Scalar>(
    x: &Array2<F>,
    weight: &Array2<F>,
    bias: &Array1<F>,
) -> Array2<F> {
    assert_eq!(x.dim().1, weight.dim().1, "dense input width mismatch");
    assert_eq!(bias.len(), weight.dim().0, "dense bias length mismatch");
    let mut out = x.dot(&weight.t());
    out += bias;
    out
}

/// Gradients of [`dense_forward`] w.r.t. input, weights, and bias.
pub(crate) fn dense_backward<F: Scalar>(
    x: &Array2<F>,
    weight: &Array2<F>,
    d_out: &Array2<F>,
) -> (Array2<F>, Array2<F>, Array1<F>) {
    let d_weight = d_out.t().dot(x);
    let d_bias = d_out.sum_axis(Axis(0));
    let d_x = d_out.dot(weight);
    (d_x, d_weight, d_bias)
}

/// Elementwise `max(v, 0)`.
pub(crate) fn relu_fwd<F: Scalar, D: ndarray::Dimension>(
    x: &ndarray::Array<F, D>,
) -> ndarray::Array<F, D> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

/// Masks gradients where the pre-activation was not strictly positive.
pub(crate) fn relu_bwd<F: Scalar, D: ndarray::Dimension>(
    pre: &ndarray::Array<F, D>,
    d_out: &ndarray::Array<F, D>,
) -> ndarray::Array<F, D> {
    let mut d = d_out.clone();
    ndarray::Zip::from(&mut d).and(pre).for_each(|g, &p| {
        if p <= F::zero() {
            *g = F::zero();
        }
    });
    d
}

/// Inverted-scaling dropout mask: entries are 0 with probability `p` and
/// `1/(1−p)` otherwise, drawn in row-major order, so a train-mode forward has
/// the eval-mode forward as its expectation and eval is a plain pass.
pub(crate) fn dropout_mask<F: Scalar>(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    p: f64,
) -> Array2<F> {
    assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
    let scale = super::s::<F>(1.0 / (1.0 - p));
    let v: Vec<F> = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < p { F::zero() } else { scale })
        .collect();
    Array2::from_shape_vec((rows, cols), v).unwrap()
}

/// Standardizes a `(b, w, 4)` scan batch with frozen per-channel statistics
/// and a learned affine. Returns the normalized values before the affine
/// (needed for the affine gradients) and the layer output.
pub(crate) fn standardize_forward<F: Scalar>(
    x: &Array3<F>,
    mean: &Array1<F>,
    std: &Array1<F>,
    alpha: &Array1<F>,
    beta: &Array1<F>,
) -> (Array3<F>, Array3<F>) {
    let c = x.dim().2;
    assert!(
        mean.len() == c && std.len() == c && alpha.len() == c && beta.len() == c,
        "standardizer channel count mismatch"
    );
    let mut y = x.clone();
    y -= mean;
    y /= std;
    let mut z = y.clone();
    z *= alpha;
    z += beta;
    (y, z)
}

/// Circular 1-D cross-correlation of one channels-first sample, the shape the
/// architecture tables use: `(c_in, w)` → `(c_out, w')`.
pub fn conv1d_circular<F: Scalar>(
    input: &Array2<F>,
    weights: &Array3<F>,
    bias: &Array1<F>,
    stride: usize,
    pad: usize,
) -> Array2<F> {
    let x = input.t().insert_axis(Axis(0)).to_owned();
    let out = conv_forward(&x, weights, bias, stride, pad);
    out.index_axis(Axis(0), 0).t().to_owned()
}

/// Circular max pooling of one channels-first sample: `(c, w)` → `(c, w')`.
pub fn maxpool1d_circular<F: Scalar>(
    input: &Array2<F>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array2<F> {
    let x = input.t().insert_axis(Axis(0)).to_owned();
    let (out, _) = maxpool_forward(&x, k, stride, pad);
    out.index_axis(Axis(0), 0).t().to_owned()
}

/// Fully connected layer for one sample.
pub fn dense<F: Scalar>(input: &Array1<F>, weight: &Array2<F>, bias: &Array1<F>) -> Array1<F> {
    let x = input.view().insert_axis(Axis(0)).to_owned();
    dense_forward(&x, weight, bias).index_axis(Axis(0), 0).to_owned()
}

/// Elementwise ReLU of one sample.
pub fn relu<F: Scalar, D: ndarray::Dimension>(x: &ndarray::Array<F, D>) -> ndarray::Array<F, D> {
    relu_fwd(x)
}

/// Standardizes one `(w, 4)` scan with frozen statistics and the learned
/// affine, returning it channels-first `(4, w)` for the conv stack.
pub fn standardize_affine<F: Scalar>(
    scan: &Array2<F>,
    mean: &Array1<F>,
    std: &Array1<F>,
    alpha: &Array1<F>,
    beta: &Array1<F>,
) -> Array2<F> {
    let x = scan.view().insert_axis(Axis(0)).to_owned();
    let (_, z) = standardize_forward(&x, mean, std, alpha, beta);
    z.index_axis(Axis(0), 0).t().to_owned()
}

/// Rotates a channels-last activation circularly by `shift` positions along
/// the width axis (positive moves content toward higher indices).
#[cfg(test)]
pub(crate) fn roll_width<F: Scalar>(x: &Array3<F>, shift: isize) -> Array3<F> {
    let (b, w, c) = x.dim();
    let mut out = Array3::<F>::zeros((b, w, c));
    for i in 0..w {
        let j = wrap(i as isize + shift, w);
        out.slice_mut(ndarray::s![.., j, ..]).assign(&x.slice(ndarray::s![.., i, ..]));
    }
    out
}

//! A small self-contained neural-network engine: circularly padded 1-D
//! convolution, max pooling, dense layers, ReLU, dropout, a frozen
//! standardizer with a learned per-channel affine, MSE and Smooth-L1 losses,
//! Adam, early-stopping training, and finite-difference gradient checking.
//!
//! Activations are stored channels-last as `(batch, width, channels)`;
//! convolutions run as an im2col gather followed by a single matrix product.
//! Everything is generic over [`Scalar`] so training runs in `f32` while
//! gradient checks run in `f64`.

mod gradcheck;
mod layers;
mod loss;
mod model_io;
mod net;
mod train;

pub use gradcheck::gradient_check;
pub use layers::{
    conv1d_circular, conv_out_width, dense, maxpool1d_circular, relu, standardize_affine,
};
pub use loss::{loss_mse, loss_smooth_l1, LossKind};
pub use model_io::{load_model, save_model, ModelMeta};
pub use net::{ConvParams, DenseParams, Gradients, Mode, Network, NetworkSpec, Variant};
pub use train::{adam_step, design_matrices, train, AdamState, TrainConfig, TrainHistory};

use thiserror::Error;

/// Element type for network arrays: `f32` for training, `f64` for gradient
/// checks. Bundles the numeric traits the layer kernels need.
pub trait Scalar:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for converting an `f64` constant into the active scalar type.
pub(crate) fn s<F: Scalar>(v: f64) -> F {
    F::from(v).expect("constant representable in scalar type")
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model version {0}")]
    UnsupportedVersion(u32),
    #[error("model file truncated")]
    Truncated,
    #[error("model file checksum mismatch")]
    ChecksumMismatch,
    #[error("{0}")]
    Invalid(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Numeric { epoch: usize, batch: usize },
}

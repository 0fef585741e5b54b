//! Regression losses. Values are accumulated in `f64` regardless of the
//! parameter precision; gradients come back in the parameter precision.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{s, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    SmoothL1,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::SmoothL1 => "smooth_l1",
        })
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;
    fn from_str(v: &str) -> Result<Self, Self::Err> {
        match v {
            "mse" => Ok(LossKind::Mse),
            "smooth_l1" => Ok(LossKind::SmoothL1),
            other => Err(format!("unknown loss {other:?} (expected mse or smooth_l1)")),
        }
    }
}

fn check_shapes<F: Scalar>(pred: &Array2<F>, target: &Array2<F>) {
    assert_eq!(pred.dim(), target.dim(), "prediction/target shape mismatch");
    assert!(!pred.is_empty(), "empty loss batch");
}

/// Mean of `(pred − target)²` over all elements.
pub fn loss_mse<F: Scalar>(pred: &Array2<F>, target: &Array2<F>) -> f64 {
    check_shapes(pred, target);
    let mut sum = 0.0f64;
    for (&p, &t) in pred.iter().zip(target.iter()) {
        let d = (p - t).to_f64().unwrap();
        sum += d * d;
    }
    sum / pred.len() as f64
}

/// Mean of the Huber-style transform: `0.5·d²` inside the unit band,
/// `|d| − 0.5` outside, which matches `0.5·d²` in value and slope at |d| = 1.
pub fn loss_smooth_l1<F: Scalar>(pred: &Array2<F>, target: &Array2<F>) -> f64 {
    check_shapes(pred, target);
    let mut sum = 0.0f64;
    for (&p, &t) in pred.iter().zip(target.iter()) {
        let d = (p - t).to_f64().unwrap();
        sum += if d.abs() < 1.0 { 0.5 * d * d } else { d.abs() - 0.5 };
    }
    sum / pred.len() as f64
}

/// Loss value plus its gradient w.r.t. the predictions.
pub(crate) fn loss_value_and_grad<F: Scalar>(
    kind: LossKind,
    pred: &Array2<F>,
    target: &Array2<F>,
) -> (f64, Array2<F>) {
    let n = s::<F>(pred.len() as f64);
    match kind {
        LossKind::Mse => {
            let value = loss_mse(pred, target);
            let two = s::<F>(2.0);
            let grad = ndarray::Zip::from(pred)
                .and(target)
                .map_collect(|&p, &t| two * (p - t) / n);
            (value, grad)
        }
        LossKind::SmoothL1 => {
            let value = loss_smooth_l1(pred, target);
            let one = F::one();
            let grad = ndarray::Zip::from(pred).and(target).map_collect(|&p, &t| {
                let d = p - t;
                let g = if d.abs() < one { d } else { d.signum() };
                g / n
            });
            (value, grad)
        }
    }
}

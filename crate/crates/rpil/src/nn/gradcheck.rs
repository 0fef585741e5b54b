//! Finite-difference verification of the backward pass.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::NormStats;

use super::loss::{loss_mse, loss_value_and_grad, LossKind};
use super::net::{Mode, Network, NetworkSpec, Variant, SCAN_CHANNELS};

/// Central-difference step. Small enough for truncation error well below the
/// pass threshold in f64, large enough to stay clear of rounding noise.
const H: f64 = 1e-5;

/// Compares analytic gradients against central finite differences on a
/// shrunken f64 network over a 3-sample batch and returns the worst relative
/// error across every trainable parameter. Dropout masks are frozen by
/// reseeding the mask stream identically for every forward evaluation.
pub fn gradient_check(variant: Variant, seed: u64) -> f64 {
    let spec = NetworkSpec::tiny(variant);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norm = NormStats { mean: [0.9, 0.2, 0.2, 0.2], std: [0.5, 0.3, 0.3, 0.3] };
    let mut net: Network<f64> = Network::new(spec, &norm, &mut rng);
    // Check at a generic parameter point: jitter every trainable array, in
    // particular the zero-initialized biases. Otherwise a dead activation
    // row leaves later pre-activations exactly on the ReLU kink, where the
    // two-sided difference quotient measures a spurious half-slope.
    for slot in 0..net.n_slots() {
        for p in net.slot_mut(slot).iter_mut() {
            *p += rng.random_range(-0.05..0.05);
        }
    }

    let b = 3;
    let x = Array3::from_shape_simple_fn((b, spec.rays, SCAN_CHANNELS), || {
        rng.random_range(0.0..1.8)
    });
    let goal = spec.variant.goal_input().then(|| {
        Array2::from_shape_simple_fn((b, 3), || rng.random_range(-1.5..1.5))
    });
    let target = Array2::from_shape_simple_fn((b, 2), || rng.random_range(-0.3..0.3));
    let mask_seed = rng.random::<u64>();

    let loss_of = |net: &Network<f64>| -> f64 {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let pred = net.forward(&x, goal.as_ref(), Mode::Train, Some(&mut mask_rng));
        loss_mse(&pred, &target)
    };

    let analytic = {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let (pred, cache) = net.forward_cached(&x, goal.as_ref(), Mode::Train, Some(&mut mask_rng));
        let (_, d_pred) = loss_value_and_grad(LossKind::Mse, &pred, &target);
        net.backward(&cache, &d_pred)
    };

    let mut worst = 0.0f64;
    for slot in 0..net.n_slots() {
        for i in 0..net.slot_mut(slot).len() {
            let orig = net.slot_mut(slot)[i];
            net.slot_mut(slot)[i] = orig + H;
            let plus = loss_of(&net);
            net.slot_mut(slot)[i] = orig - H;
            let minus = loss_of(&net);
            net.slot_mut(slot)[i] = orig;
            let numeric = (plus - minus) / (2.0 * H);
            let a = analytic.slot(slot)[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if err > worst {
                worst = err;
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_variants_match_finite_differences() {
        for variant in Variant::ALL {
            let err = gradient_check(variant, 2024);
            assert!(err < 1e-4, "{variant}: worst relative error {err}");
        }
    }
}

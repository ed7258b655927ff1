//! Central finite-difference verification of analytic gradients.

use super::loss::LossKind;
use super::model::{forward_backward, Batch, ModelParams};
use super::tensor::Tensor;
use crate::error::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Entries below this magnitude are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

/// Central differences of `f` at `point`.
pub fn finite_difference<F>(mut f: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            x[i] = point[i] + h;
            let plus = f(&x);
            x[i] = point[i] - h;
            let minus = f(&x);
            x[i] = point[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-6)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}

/// Largest relative error between the reverse-mode gradients (parameters
/// and input) and central differences with `h = 1e-5`.
pub fn grad_check(params: &ModelParams, batch: &Batch, loss_kind: LossKind) -> Result<f64> {
    let zero = Tensor::zeros(batch.inputs.shape());
    let analytic = forward_backward(params, batch, &zero, loss_kind)?;

    let theta = params.flatten();
    let mut probe = params.clone();
    let numeric_params = finite_difference(
        |flat| {
            probe.assign_flat(flat).expect("same length");
            forward_backward(&probe, batch, &zero, loss_kind)
                .map(|b| b.loss)
                .unwrap_or(f64::NAN)
        },
        &theta,
        FD_STEP,
    );
    let numeric_input = finite_difference(
        |flat| {
            let delta = Tensor::new(batch.inputs.shape().to_vec(), flat.to_vec()).expect("shape");
            forward_backward(params, batch, &delta, loss_kind)
                .map(|b| b.loss)
                .unwrap_or(f64::NAN)
        },
        zero.data(),
        FD_STEP,
    );

    let e_params = max_relative_error(&analytic.grad_params.flatten(), &numeric_params);
    let e_input = max_relative_error(analytic.grad_input.data(), &numeric_input);
    Ok(e_params.max(e_input))
}

/// [`grad_check`] on a small MLP, batch and loss all drawn from `seed`.
pub fn random_mlp_check(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = vec![rng.gen_range(2..=8)];
    for _ in 0..rng.gen_range(1..=2) {
        sizes.push(rng.gen_range(2..=10));
    }
    let classes = rng.gen_range(2..=5);
    sizes.push(classes);
    let mut params = ModelParams::mlp(&sizes, &mut rng)?;
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    let n = rng.gen_range(1..=4);
    let inputs = Tensor::new(vec![n, sizes[0]], (0..n * sizes[0]).map(|_| rng.gen()).collect())?;
    let labels = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    let kind = if rng.gen() { LossKind::CrossEntropy } else { LossKind::Margin };
    grad_check(&params, &Batch::new(inputs, labels)?, kind)
}

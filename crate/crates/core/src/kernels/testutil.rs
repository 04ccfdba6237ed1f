//! Finite-difference helpers shared by the kernel unit tests.

use crate::rng::Rng;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-3;

pub fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform_f32() * 2.0 - 1.0)
}

/// Central differences of `f` at `x`; coordinates where `valid(x+h, x-h)`
/// is false come back as `None`.
pub fn central_diff(
    x: &[f64],
    f: impl Fn(&[f64]) -> f64,
    valid: impl Fn(&[f64], &[f64]) -> bool,
) -> Vec<Option<f64>> {
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    (0..x.len())
        .map(|i| {
            plus[i] = x[i] + FD_STEP;
            minus[i] = x[i] - FD_STEP;
            let out = valid(&plus, &minus).then(|| (f(&plus) - f(&minus)) / (2.0 * FD_STEP));
            plus[i] = x[i];
            minus[i] = x[i];
            out
        })
        .collect()
}

/// `max |analytic - numeric| / max |numeric|` over the checked coordinates.
pub fn rel_error(analytic: &[f32], numeric: &[Option<f64>]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        if let Some(n) = n {
            diff = diff.max((*a as f64 - n).abs());
            scale = scale.max(n.abs());
        }
    }
    diff / scale.max(1e-12)
}

pub fn fd_rel_error(x: &[f64], analytic: &[f32], f: impl Fn(&[f64]) -> f64) -> f64 {
    rel_error(analytic, &central_diff(x, f, |_, _| true))
}

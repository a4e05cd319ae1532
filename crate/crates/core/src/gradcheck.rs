//! Central finite-difference gradients for checking backpropagation.
//!
//! The probes here never touch tape internals: they treat the function under
//! test as a black box from flat inputs to a scalar, so they stay independent
//! of the gradient path they are used to check.

/// Central-difference gradient of `f` at `x` with step `eps` per coordinate.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let hi = f(&probe);
        probe[i] = orig - eps;
        let lo = f(&probe);
        probe[i] = orig;
        grad[i] = (hi - lo) / (2.0 * eps);
    }
    grad
}

/// Largest relative error between two gradients, with an absolute floor so
/// that finite-difference noise around zero entries does not register.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient lengths differ");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let diff = (x - y).abs();
            let scale = x.abs().max(y.abs());
            if diff <= 1e-8 {
                0.0
            } else {
                diff / scale.max(1e-8)
            }
        })
        .fold(0.0, f64::max)
}

//! Central-finite-difference gradient verification.
//!
//! The checker never touches a layer's backward pass: it re-runs the forward
//! computation at perturbed inputs and differences the scalar loss, so it is
//! an independent oracle for every analytic gradient in this crate.

/// Scalar projection loss used to reduce a tensor output to one number:
/// `L(y) = Σ y_i * proj_i`. Its gradient wrt y is simply `proj`.
pub fn projection_loss(y: &[f64], proj: &[f64]) -> f64 {
    y.iter().zip(proj).map(|(a, b)| a * b).sum()
}

/// Relative error between an analytic gradient and central finite differences
/// of `loss_at`, evaluated over every component of the input vector.
///
/// `loss_at` must be a pure function of the vector handed to it.
/// Returns max over components of |analytic - numeric| / max(1, |analytic|, |numeric|).
pub fn max_rel_error(
    base: &[f64],
    analytic: &[f64],
    eps: f64,
    mut loss_at: impl FnMut(&[f64]) -> f64,
) -> f64 {
    assert_eq!(base.len(), analytic.len());
    let mut worst: f64 = 0.0;
    let mut probe = base.to_vec();
    for i in 0..base.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let lp = loss_at(&probe);
        probe[i] = orig - eps;
        let lm = loss_at(&probe);
        probe[i] = orig;
        let numeric = (lp - lm) / (2.0 * eps);
        let denom = 1.0_f64.max(analytic[i].abs()).max(numeric.abs());
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_correct_and_wrong_gradients() {
        // f(x) = sum(x_i^2), grad = 2x.
        let x = vec![0.3, -1.2, 2.0];
        let grad: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let err = max_rel_error(&x, &grad, 1e-5, |p| p.iter().map(|v| v * v).sum());
        assert!(err < 1e-9, "err {err}");

        let bad: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let err = max_rel_error(&x, &bad, 1e-5, |p| p.iter().map(|v| v * v).sum());
        assert!(err > 1e-2);
    }
}

//! Central finite differences, the oracle for every analytic gradient.

use crate::error::{Error, Result};

/// `(f(θ + h eᵢ) − f(θ − h eᵢ)) / 2h` for every coordinate.
pub fn finite_diff_grad(
    mut f: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!("finite difference step must be > 0, got {h}")));
    }
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at coordinate {i} (f+ = {plus}, f- = {minus})"
            )));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Norm-wise relative error `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞)`, with an absolute
/// floor of `1e-12` in the denominator so that two zero vectors compare equal.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = super::linalg::norm_inf(analytic)
        .max(super::linalg::norm_inf(numeric))
        .max(1e-12);
    diff / scale
}

//! Central finite differences for checking analytic gradients.
//!
//! Kept independent of the tape: callers supply a plain closure from a
//! flat parameter vector to a scalar, so the numeric side never touches
//! the backward pass it is checking.

/// Central-difference gradient of `f` at `x`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let mut work = x.to_vec();
    for i in 0..x.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let up = f(&work);
        work[i] = orig - eps;
        let down = f(&work);
        work[i] = orig;
        out[i] = (up - down) / (2.0 * eps);
    }
    out
}

/// Largest relative error between two gradient vectors, with a small
/// absolute floor so near-zero components do not blow up the ratio.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

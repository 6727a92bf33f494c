//! Per-example losses of the two heads.

use crate::error::{Error, Result};
use crate::utility::UtilityFn;

/// Probabilities are clamped to `[P_MIN, 1 - P_MIN]` inside the logarithm.
pub const P_MIN: f64 = 1e-7;

/// Binary cross-entropy of probability `p` against label `y` and its
/// derivative `dL/dp`, which is zero where the clamp is active.
pub fn detection_loss_grad(p: f64, y: f64) -> (f64, f64) {
    let pc = p.clamp(P_MIN, 1.0 - P_MIN);
    let loss = -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
    (loss, detection_loss_dp(p, y))
}

/// Negative utility of `estimate` against `theta`; writes `-grad u` into
/// `d_estimate`.
pub fn estimation_loss_grad(estimate: &[f64], theta: &[f64], u: &UtilityFn, d_estimate: &mut [f64]) -> f64 {
    let val = u.evaluate_unchecked(estimate, theta);
    u.gradient(estimate, theta, d_estimate);
    d_estimate.iter_mut().for_each(|d| *d = -*d);
    -val
}

/// `dL/dp` of the clamped cross-entropy; zero where the clamp is active.
pub fn detection_loss_dp(p: f64, y: f64) -> f64 {
    if !(P_MIN..=1.0 - P_MIN).contains(&p) {
        return 0.0;
    }
    -y / p + (1.0 - y) / (1.0 - p)
}

/// Mean binary cross-entropy over a batch.
pub fn detection_loss(p: &[f64], y: &[f64]) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    p.iter().zip(y).map(|(p, y)| detection_loss_grad(*p, *y).0).sum::<f64>() / p.len() as f64
}

/// Negative mean utility over signal-present examples.
pub fn estimation_loss(estimates: &[Vec<f64>], thetas: &[Vec<f64>], u: &UtilityFn) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Empty("estimation batch"));
    }
    let mean = estimates
        .iter()
        .zip(thetas)
        .map(|(e, t)| u.evaluate_unchecked(e, t))
        .sum::<f64>()
        / estimates.len() as f64;
    Ok(-mean)
}

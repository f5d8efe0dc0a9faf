//! Scalar losses and the logistic function.

use super::KernelError;

/// Numerically stable logistic function 1 / (1 + e^-x).
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean squared error and its gradient with respect to `pred`:
/// loss = mean((p - t)^2), grad_i = 2 (p_i - t_i) / n.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), KernelError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(KernelError::shape(
            "mse_loss",
            format!("two nonempty vectors of equal length, pred has {}", pred.len()),
            format!("target has {}", target.len()),
        ));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for (g, (&p, &t)) in grad.iter_mut().zip(pred.iter().zip(target)) {
        let d = p - t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    Ok((loss / n, grad))
}

// Probabilities are clamped away from 0/1 before the log; the clamp also
// zeroes the gradient where it binds, so the reported gradient stays the true
// derivative of the clamped loss.
const BCE_EPS: f64 = 1e-7;

/// Mean binary cross-entropy and its gradient with respect to `pred`.
/// Predictions are clamped to [1e-7, 1 - 1e-7]; targets must be exactly 0 or 1.
// The comparison pair below must stay as-is: a NaN prediction fails both
// comparisons and falls through to the formula, so the NaN reaches the
// gradient instead of being silently zeroed as a clamped endpoint.
#[allow(clippy::manual_range_contains)]
pub fn bce_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), KernelError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(KernelError::shape(
            "bce_loss",
            format!("two nonempty vectors of equal length, pred has {}", pred.len()),
            format!("target has {}", target.len()),
        ));
    }
    for (i, &t) in target.iter().enumerate() {
        if t != 0.0 && t != 1.0 {
            return Err(KernelError::value(
                "bce_loss",
                format!("target[{i}] = {t}, labels must be exactly 0 or 1"),
            ));
        }
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for (g, (&p, &t)) in grad.iter_mut().zip(pred.iter().zip(target)) {
        let clamped = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        loss += -(t * clamped.ln() + (1.0 - t) * (1.0 - clamped).ln());
        *g = if p < BCE_EPS || p > 1.0 - BCE_EPS {
            0.0
        } else {
            (-t / clamped + (1.0 - t) / (1.0 - clamped)) / n
        };
    }
    Ok((loss / n, grad))
}

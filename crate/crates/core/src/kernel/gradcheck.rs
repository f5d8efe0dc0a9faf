//! Central-difference gradient checking.
//!
//! The one numeric oracle everything upstream leans on: any analytic gradient
//! in this crate can be replayed against (L(x + h e_i) - L(x - h e_i)) / 2h.

use super::KernelError;

/// Symmetric relative error with a floor that keeps 0-vs-0 comparisons at 0.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-12, analytic.abs() + numeric.abs())
}

/// Result of a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compare `analytic` against central differences of `loss_fn` at `params`,
/// one coordinate at a time with step `step`. `loss_fn` must be deterministic
/// for fixed parameters; a non-finite loss is an error.
pub fn finite_diff_gradcheck<F>(
    mut loss_fn: F,
    params: &mut [f64],
    analytic: &[f64],
    step: f64,
) -> Result<GradCheckReport, KernelError>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != params.len() {
        return Err(KernelError::shape(
            "finite_diff_gradcheck",
            format!("analytic gradient of length {}", params.len()),
            format!("{}", analytic.len()),
        ));
    }
    if step <= 0.0 || !step.is_finite() {
        return Err(KernelError::value("finite_diff_gradcheck", format!("bad step {step}")));
    }
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        checked: params.len(),
    };
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + step;
        let up = loss_fn(params);
        params[i] = orig - step;
        let down = loss_fn(params);
        params[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(KernelError::value(
                "finite_diff_gradcheck",
                format!("loss_fn returned non-finite value near coordinate {i}"),
            ));
        }
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_index = i;
        }
    }
    Ok(report)
}

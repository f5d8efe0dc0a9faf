use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::federation::{ClientRoundRecord, TrainingTrace};

/// Run-estimated constants for the bound checks, measured on one client's
/// records of a trace. These upper- (or lower-) bound their own run only;
/// they are not universal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConstants {
    /// Largest observed gradient norm on shared-scope parameters.
    pub a: f64,
    /// Largest observed gradient norm on everything else.
    pub b: f64,
    /// First-round loss minus the best loss seen anywhere in the run.
    pub m: f64,
    /// Largest ratio ||grad(x) - grad(y)|| / ||x - y|| over consecutive
    /// measured points (full parameter vector), the run's local smoothness.
    pub beta_smooth: f64,
    /// Smallest observed ||grad||^2 / (2 (L - L_best)) over points still
    /// above the best loss; `None` when every point already sits at the
    /// best loss, which leaves the constant undefined.
    pub mu_pl: Option<f64>,
    /// Learning rate the run used; carried for the report.
    pub eta: f64,
}

/// Points where the parameter vectors barely moved contribute noise, not
/// curvature; skip them when estimating smoothness.
const MIN_STEP_NORM: f64 = 1e-12;

fn client_series(
    trace: &TrainingTrace,
    client_id: usize,
) -> Result<Vec<&ClientRoundRecord>, MetricsError> {
    let series: Vec<&ClientRoundRecord> = trace
        .all_evals()
        .filter_map(|r| r.clients.iter().find(|c| c.client_id == client_id))
        .collect();
    if series.is_empty() {
        return Err(MetricsError::UnknownClient(client_id));
    }
    Ok(series)
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Squared gradient norms `(shared, private)` for one client, one pair per
/// round, in round order.
pub fn grad_norm_trace(trace: &TrainingTrace, client_id: usize) -> Result<Vec<(f64, f64)>, MetricsError> {
    let rows: Vec<(f64, f64)> = trace
        .rounds
        .iter()
        .filter_map(|r| r.clients.iter().find(|c| c.client_id == client_id))
        .map(|c| (c.grad_shared_sq, c.grad_private_sq))
        .collect();
    if rows.is_empty() {
        // Distinguish "no such client" from "no rounds".
        if trace.rounds.is_empty() {
            return Err(MetricsError::EmptyTrace);
        }
        return Err(MetricsError::UnknownClient(client_id));
    }
    Ok(rows)
}

/// Estimate [`ConvergenceConstants`] for one client from every measured
/// point of the trace (rounds plus the closing evaluation).
pub fn estimate_constants(
    trace: &TrainingTrace,
    client_id: usize,
    eta: f64,
) -> Result<ConvergenceConstants, MetricsError> {
    let series = client_series(trace, client_id)?;
    let mut a_sq: f64 = 0.0;
    let mut b_sq: f64 = 0.0;
    let mut best = f64::INFINITY;
    for rec in &series {
        a_sq = a_sq.max(rec.grad_shared_sq);
        b_sq = b_sq.max(rec.grad_private_sq);
        best = best.min(rec.loss.total);
    }
    let m = series[0].loss.total - best;
    let mut beta: f64 = 0.0;
    for pair in series.windows(2) {
        let dx = l2_diff(&pair[1].params, &pair[0].params);
        if dx > MIN_STEP_NORM {
            beta = beta.max(l2_diff(&pair[1].grads, &pair[0].grads) / dx);
        }
    }
    let mut mu_pl: Option<f64> = None;
    for rec in &series {
        let gap = rec.loss.total - best;
        if gap > 0.0 {
            let ratio = (rec.grad_shared_sq + rec.grad_private_sq) / (2.0 * gap);
            mu_pl = Some(match mu_pl {
                Some(mu) => mu.min(ratio),
                None => ratio,
            });
        }
    }
    Ok(ConvergenceConstants { a: a_sq.sqrt(), b: b_sq.sqrt(), m, beta_smooth: beta, mu_pl, eta })
}

/// The first bound's right side, `2(A+B) sqrt(M beta / 2T)`.
pub fn theorem1_rhs(constants: &ConvergenceConstants, rounds: usize) -> f64 {
    2.0 * (constants.a + constants.b) * (constants.m * constants.beta_smooth / (2.0 * rounds as f64)).sqrt()
}

/// The second bound's right side, `(2(A+B)/mu) sqrt(M beta / 2T)`; `None`
/// when the PL constant was not estimable.
pub fn theorem2_rhs(constants: &ConvergenceConstants, rounds: usize) -> Option<f64> {
    let mu = constants.mu_pl?;
    Some(2.0 * (constants.a + constants.b) / mu * (constants.m * constants.beta_smooth / (2.0 * rounds as f64)).sqrt())
}

/// Outcome of one bound evaluation. `NotEstimable` appears when a constant
/// the bound needs has no defined value on the trace (a perfectly flat run).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BoundCheck {
    Evaluated { lhs: f64, rhs: f64, satisfied: bool },
    NotEstimable { reason: String },
}

impl BoundCheck {
    pub fn satisfied(&self) -> bool {
        matches!(self, BoundCheck::Evaluated { satisfied: true, .. })
    }
}

/// One bound inequality evaluated on one client's trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    /// Which bound: 1 (gradient-norm proximity to critical points) or 2
    /// (loss gap under the PL property).
    pub theorem: u8,
    pub client_id: usize,
    /// T in the bound formula: the number of federated rounds.
    pub rounds: usize,
    pub check: BoundCheck,
    /// The optimal loss is unobservable; the second bound proxies it by the
    /// best loss observed in the run. Always `true` there, `false` for the
    /// first bound, which needs no optimum.
    pub l_star_is_proxy: bool,
    pub constants: ConvergenceConstants,
}

/// First bound: the smallest per-round squared shared-gradient norm is at
/// most `2(A+B) sqrt(M beta / 2T)`.
pub fn theorem1_check(
    trace: &TrainingTrace,
    client_id: usize,
    constants: &ConvergenceConstants,
) -> Result<TheoremReport, MetricsError> {
    let rounds = trace.rounds.len();
    if rounds == 0 {
        return Err(MetricsError::EmptyTrace);
    }
    let lhs = grad_norm_trace(trace, client_id)?
        .iter()
        .map(|&(shared, _)| shared)
        .fold(f64::INFINITY, f64::min);
    let rhs = theorem1_rhs(constants, rounds);
    Ok(TheoremReport {
        theorem: 1,
        client_id,
        rounds,
        check: BoundCheck::Evaluated { lhs, rhs, satisfied: lhs <= rhs },
        l_star_is_proxy: false,
        constants: *constants,
    })
}

/// Second bound: the gap between the closing loss and the best observed
/// loss (the proxy for the optimum) is at most `(2(A+B)/mu) sqrt(M beta /
/// 2T)`. Reports `NotEstimable` when the trace never rose above its best
/// loss, leaving the PL constant undefined.
pub fn theorem2_check(
    trace: &TrainingTrace,
    client_id: usize,
    constants: &ConvergenceConstants,
) -> Result<TheoremReport, MetricsError> {
    let rounds = trace.rounds.len();
    if rounds == 0 {
        return Err(MetricsError::EmptyTrace);
    }
    let series = client_series(trace, client_id)?;
    let best = series.iter().map(|r| r.loss.total).fold(f64::INFINITY, f64::min);
    let lhs = series.last().expect("nonempty series").loss.total - best;
    let check = match theorem2_rhs(constants, rounds) {
        Some(rhs) => BoundCheck::Evaluated { lhs, rhs, satisfied: lhs <= rhs },
        None => BoundCheck::NotEstimable {
            reason: "PL constant undefined: no measured point sits above the best observed loss".into(),
        },
    };
    Ok(TheoremReport { theorem: 2, client_id, rounds, check, l_star_is_proxy: true, constants: *constants })
}

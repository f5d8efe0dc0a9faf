use serde::{Deserialize, Serialize};

use super::convergence::{estimate_constants, theorem1_check, theorem2_check, TheoremReport};
use super::effects::{ate_error, pehe, EffectEstimates};
use super::MetricsError;
use crate::federation::TrainingTrace;

/// Everything one trained run reports: causal error per client and pooled,
/// plus both bound checks per client. Client order follows the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub client_ids: Vec<usize>,
    pub pehe_per_client: Vec<f64>,
    pub ate_error_per_client: Vec<f64>,
    /// PEHE over all clients' test samples pooled into one vector.
    pub pooled_pehe: f64,
    pub theorem1: Vec<TheoremReport>,
    pub theorem2: Vec<TheoremReport>,
}

/// Assemble a [`MetricsReport`] from per-client effect estimates (aligned
/// with the trace's client order) and the training trace they came from.
pub fn metrics_report(
    estimates: &[EffectEstimates],
    trace: &TrainingTrace,
    eta: f64,
) -> Result<MetricsReport, MetricsError> {
    let client_ids: Vec<usize> = trace.final_eval.clients.iter().map(|c| c.client_id).collect();
    if estimates.len() != client_ids.len() {
        return Err(MetricsError::Length {
            context: "estimates per client".into(),
            expected: client_ids.len(),
            got: estimates.len(),
        });
    }
    let mut pehe_per_client = Vec::with_capacity(estimates.len());
    let mut ate_per_client = Vec::with_capacity(estimates.len());
    let mut pooled_hat = Vec::new();
    let mut pooled_true = Vec::new();
    for est in estimates {
        pehe_per_client.push(pehe(est)?);
        ate_per_client.push(ate_error(est)?);
        let truth = est
            .tau_true
            .as_ref()
            .ok_or_else(|| MetricsError::MissingGroundTruth("pooled_pehe needs tau_true".into()))?;
        pooled_hat.extend_from_slice(&est.tau_hat);
        pooled_true.extend_from_slice(truth);
    }
    let pooled = EffectEstimates::new(pooled_hat, Some(pooled_true))?;
    let mut theorem1 = Vec::with_capacity(client_ids.len());
    let mut theorem2 = Vec::with_capacity(client_ids.len());
    for &k in &client_ids {
        let constants = estimate_constants(trace, k, eta)?;
        theorem1.push(theorem1_check(trace, k, &constants)?);
        theorem2.push(theorem2_check(trace, k, &constants)?);
    }
    Ok(MetricsReport {
        client_ids,
        pehe_per_client,
        ate_error_per_client: ate_per_client,
        pooled_pehe: pehe(&pooled)?,
        theorem1,
        theorem2,
    })
}

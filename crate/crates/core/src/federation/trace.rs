use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FederationError;
use crate::model::LossBreakdown;

/// One client's measurements for one round, taken at the round's starting
/// point (right after the broadcast, before any local step). Holds parameter
/// buffers and scalar summaries only — never rows of data.
///
/// `params` and `grads` are the full flattened parameter and gradient
/// vectors at that point; convergence diagnostics need consecutive pairs of
/// them to estimate smoothness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundRecord {
    pub client_id: usize,
    /// Training rows on this client (aggregation weight).
    pub n_train: usize,
    pub loss: LossBreakdown,
    /// Squared Euclidean norm of the gradient on shared-scope parameters.
    pub grad_shared_sq: f64,
    /// Squared Euclidean norm of the gradient on everything else.
    pub grad_private_sq: f64,
    pub params: Vec<f64>,
    pub grads: Vec<f64>,
}

/// Everything one round reports back: per-client measurements plus a
/// fingerprint of the aggregated shared parameters. `omega_checksum` is
/// `None` for baseline runs, which have no server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u64,
    pub clients: Vec<ClientRoundRecord>,
    pub omega_checksum: Option<u64>,
}

/// A full run: one report per round, plus a final evaluation taken after the
/// closing broadcast (for federated runs) so the trace ends on the state the
/// run actually hands back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub rounds: Vec<RoundReport>,
    pub final_eval: RoundReport,
}

impl TrainingTrace {
    /// Round reports followed by the final evaluation: every measured point
    /// in order.
    pub fn all_evals(&self) -> impl Iterator<Item = &RoundReport> {
        self.rounds.iter().chain(std::iter::once(&self.final_eval))
    }

    /// Mean total loss across clients at round `t`.
    pub fn mean_total(&self, t: usize) -> f64 {
        let r = &self.rounds[t];
        r.clients.iter().map(|c| c.loss.total).sum::<f64>() / r.clients.len() as f64
    }
}

/// Write the per-round rows as CSV: one row per (round, client) with the
/// loss components and gradient norms. The final evaluation is not a round
/// and is not exported; row count is exactly rounds x clients.
pub fn write_trace_csv<W: Write>(trace: &TrainingTrace, out: W) -> Result<(), FederationError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "round",
        "client",
        "loss_total",
        "loss_outcome",
        "loss_kl",
        "loss_prox",
        "grad_norm_shared",
        "grad_norm_private",
    ])?;
    for report in &trace.rounds {
        for c in &report.clients {
            w.write_record([
                report.round.to_string(),
                c.client_id.to_string(),
                format!("{:.17e}", c.loss.total),
                format!("{:.17e}", c.loss.outcome),
                format!("{:.17e}", c.loss.encoder_kl),
                format!("{:.17e}", c.loss.proximal),
                format!("{:.17e}", c.grad_shared_sq.sqrt()),
                format!("{:.17e}", c.grad_private_sq.sqrt()),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// [`write_trace_csv`] to a file path.
pub fn write_trace_csv_path(trace: &TrainingTrace, path: &Path) -> Result<(), FederationError> {
    let file = std::fs::File::create(path).map_err(csv::Error::from)?;
    write_trace_csv(trace, file)
}

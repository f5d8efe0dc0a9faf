//! Effect-estimation quality and convergence diagnostics.
//!
//! Two families live here. The causal metrics ([`pehe`], [`ate_error`])
//! compare estimated per-sample effects against the generator's ground
//! truth. The convergence side distills a [`TrainingTrace`] into run
//! constants (largest observed gradient norms, initial-to-best loss gap,
//! local smoothness, a PL constant) and evaluates two bound inequalities
//! against them — self-consistency diagnostics over the run that produced
//! the constants, not independent predictions.
//!
//! Every measured point in a trace sits right after a broadcast, where the
//! proximal term and its gradient both vanish, so the recorded losses and
//! gradients are those of the pure local objective regardless of the
//! anchor weight.
//!
//! [`TrainingTrace`]: crate::federation::TrainingTrace

mod convergence;
mod effects;
mod report;

pub use convergence::{
    estimate_constants, grad_norm_trace, theorem1_check, theorem1_rhs, theorem2_check, theorem2_rhs,
    BoundCheck, ConvergenceConstants, TheoremReport,
};
pub use effects::{ate_error, pehe, EffectEstimates};
pub use report::{metrics_report, MetricsReport};

use thiserror::Error;

/// Errors raised by the metrics layer.
#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no ground-truth effects: {0}")]
    MissingGroundTruth(String),
    #[error("{context}: expected length {expected}, got {got}")]
    Length { context: String, expected: usize, got: usize },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("client {0} does not appear in the trace")]
    UnknownClient(usize),
    #[error("trace has no rounds")]
    EmptyTrace,
}

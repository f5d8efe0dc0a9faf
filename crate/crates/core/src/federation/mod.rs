//! Round-based federation of the shared branch.
//!
//! The server keeps a flattened copy of the shared parameters (`omega_c`).
//! Each round it broadcasts that vector to every client, the clients run a
//! configurable number of local epochs against their own data with a proximal
//! anchor on the broadcast value, and the server aggregates the drifted
//! shared branches back into a new `omega_c`. Raw data never crosses the
//! client boundary: the only things a round moves are parameter buffers,
//! loss scalars, and gradient norms.
//!
//! [`local_only_baseline`] runs the identical per-client schedule with no
//! broadcast, no aggregation, and no anchor, so the value of sharing can be
//! measured against models that never communicate.
//!
//! Within a round, clients train on a worker pool (no shared mutable state);
//! aggregation is a barrier that reduces in client order. All shuffle
//! streams are derived from `(seed, client, round, epoch)`, so results do
//! not depend on the execution schedule.

mod aggregate;
mod rounds;
mod state;
mod trace;

pub use aggregate::{aggregate_shared, broadcast_shared, checksum_f64s};
pub use rounds::{build_clients, local_only_baseline, run_round, run_training};
pub use state::{AggregationMode, ClientState, FederationConfig, ServerState};
pub use trace::{write_trace_csv, write_trace_csv_path, ClientRoundRecord, RoundReport, TrainingTrace};

use thiserror::Error;

/// Errors raised by the federation layer.
#[derive(Debug, Error)]
pub enum FederationError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{context}: expected length {expected}, got {got}")]
    Length { context: String, expected: usize, got: usize },
    #[error("no clients to federate")]
    NoClients,
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error("trace export failed: {0}")]
    Csv(#[from] csv::Error),
}

impl FederationError {
    pub(crate) fn len(context: impl Into<String>, expected: usize, got: usize) -> FederationError {
        FederationError::Length { context: context.into(), expected, got }
    }
}

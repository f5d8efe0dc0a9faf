//! The per-client model: three variational encoders (shared-feature, private-
//! feature, and a reference encoder over the full covariate row), a pair of
//! interacting MLP branches, and twin outcome heads.
//!
//! The shared branch consumes only the shared representation and is the part
//! the server aggregates. The client-specific branch consumes, at every depth,
//! its own previous output concatenated with the shared branch's activation at
//! the same depth, so client-specific layers can modulate the shared signal
//! without ever being averaged across clients. The reference encoder never
//! feeds the predictive path; it only anchors the two marginal encoders
//! through KL terms, and is itself fit by replaying its code through a frozen
//! copy of the shared branch and heads.

mod forward;
mod objective;
mod params;
mod train;

pub use forward::{encode, estimate_cate, predict_pos, EncodeMode, EncodeOutput, PredictOutput};
pub use objective::{
    encoder_loss, local_objective, LossBreakdown, ModelGradients, ObjectiveSettings, SampleMode,
};
pub use params::{
    init_model, load_checkpoint, save_checkpoint, ClientDims, DisentangleModel, ModelCheckpoint,
    ModelHyperparams, OutcomeKind, SharedScope, CHECKPOINT_VERSION,
};
pub use train::{sgd_step, train_local_epoch, EpochSettings};

use crate::kernel::KernelError;
use thiserror::Error;

/// Errors raised while building, evaluating, or persisting a model.
#[derive(Debug, Error)]
pub enum ModelError {
    /// Invalid architecture description (zero widths, empty branch, ...).
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    /// Input row or parameter vector with the wrong width.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },
    /// A batch/label problem: empty index set, unlabeled sample, bad target.
    #[error("bad batch: {0}")]
    BadBatch(String),
    /// Bubbled up from the numeric kernel.
    #[error(transparent)]
    Kernel(#[from] KernelError),
    /// Checkpoint file could not be read or written.
    #[error("checkpoint io at {path}: {source}")]
    CheckpointIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// Checkpoint file held malformed or incompatible content.
    #[error("checkpoint format at {path}: {detail}")]
    CheckpointFormat { path: String, detail: String },
}

impl ModelError {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        ModelError::Dimension {
            context: context.into(),
            expected,
            got,
        }
    }
}

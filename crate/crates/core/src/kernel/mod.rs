//! Dense numeric kernel: f64 matrices, MLP forward/backward with hand-written
//! gradients, regression/classification losses, diagonal-Gaussian KL, and a
//! central-difference gradient checker.
//!
//! Everything here stores parameters in plain row-major buffers. That is a
//! deliberate choice over an autodiff framework: federated averaging and the
//! proximal distance need to read and write raw parameter vectors, and the
//! whole model is small enough that explicit backprop stays auditable.

mod gaussian;
mod gradcheck;
mod losses;
mod matrix;
mod mlp;

pub use gaussian::{kl_diag_gaussian, kl_grad_wrt_q, DiagGaussian, KlGrad};
pub use gradcheck::{finite_diff_gradcheck, relative_error, GradCheckReport};
pub use losses::{bce_loss, mse_loss, sigmoid};
pub use matrix::Matrix;
pub use mlp::{
    flatten_layers, flat_len, layer_backward, layer_forward, load_flat, mlp_backward, mlp_forward,
    sgd_update, Activation, ForwardCache, LayerCache, LayerGrad, LayerParams,
};

use thiserror::Error;

/// Errors raised by kernel operations.
#[derive(Debug, Error)]
pub enum KernelError {
    /// A vector or matrix had the wrong dimensions for the requested op.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },
    /// An input value was outside the op's domain (non-finite, bad label, ...).
    #[error("invalid value in {context}: {detail}")]
    InvalidValue { context: String, detail: String },
}

impl KernelError {
    pub(crate) fn shape(context: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        KernelError::ShapeMismatch {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub(crate) fn value(context: impl Into<String>, detail: impl Into<String>) -> Self {
        KernelError::InvalidValue {
            context: context.into(),
            detail: detail.into(),
        }
    }
}

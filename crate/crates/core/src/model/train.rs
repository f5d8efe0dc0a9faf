//! Minibatch SGD over the local objective.

use super::objective::{local_objective, LossBreakdown, ModelGradients, ObjectiveSettings};
use super::params::DisentangleModel;
use super::ModelError;
use crate::datagen::ClientDataset;
use crate::kernel::sgd_update;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Optimizer knobs for one local epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochSettings {
    pub eta: f64,
    pub batch_size: usize,
}

impl Default for EpochSettings {
    fn default() -> Self {
        EpochSettings { eta: 0.01, batch_size: 32 }
    }
}

/// One SGD step over every component with the same learning rate.
pub fn sgd_step(model: &mut DisentangleModel, grads: &ModelGradients, eta: f64) -> Result<(), ModelError> {
    sgd_update(&mut model.shared_encoder, &grads.shared_encoder, eta)?;
    sgd_update(&mut model.private_encoder, &grads.private_encoder, eta)?;
    sgd_update(&mut model.reference_encoder, &grads.reference_encoder, eta)?;
    sgd_update(&mut model.shared_branch, &grads.shared_branch, eta)?;
    sgd_update(&mut model.specific_branch, &grads.specific_branch, eta)?;
    sgd_update(
        std::slice::from_mut(&mut model.head_mu0),
        std::slice::from_ref(&grads.head_mu0),
        eta,
    )?;
    sgd_update(
        std::slice::from_mut(&mut model.head_mu1),
        std::slice::from_ref(&grads.head_mu1),
        eta,
    )?;
    Ok(())
}

/// One pass over the client's rows: shuffle with the caller's stream, walk
/// batches in order, and take one SGD step per batch. Returns the per-batch
/// loss breakdowns in visit order.
pub fn train_local_epoch(
    model: &mut DisentangleModel,
    data: &ClientDataset,
    anchor: Option<&[f64]>,
    objective: &ObjectiveSettings,
    epoch: &EpochSettings,
    shuffle_rng: &mut ChaCha8Rng,
) -> Result<Vec<LossBreakdown>, ModelError> {
    if data.n() == 0 {
        return Err(ModelError::BadBatch("client has no rows".into()));
    }
    if epoch.batch_size == 0 {
        return Err(ModelError::InvalidConfig("batch_size must be at least 1".into()));
    }
    if !epoch.eta.is_finite() || epoch.eta < 0.0 {
        return Err(ModelError::InvalidConfig(format!(
            "learning rate must be finite and nonnegative, got {}",
            epoch.eta
        )));
    }
    let mut order: Vec<usize> = (0..data.n()).collect();
    order.shuffle(shuffle_rng);
    let mut trace = Vec::with_capacity(order.len().div_ceil(epoch.batch_size));
    for batch in order.chunks(epoch.batch_size) {
        let (breakdown, grads) = local_objective(model, data, batch, anchor, objective)?;
        sgd_step(model, &grads, epoch.eta)?;
        trace.push(breakdown);
    }
    Ok(trace)
}

//! Model architecture, initialization, flat parameter views, checkpoints.

use super::ModelError;
use crate::kernel::{flat_len, flatten_layers, load_flat, Activation, LayerParams};
use crate::rng::{derive_rng, purpose};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// What the outcome heads emit: raw values for regression, probabilities
/// (sigmoid heads, cross-entropy loss) for binary outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Continuous,
    Binary,
}

/// Which parameters count as "shared" for aggregation, the proximal distance,
/// and the shared/private gradient-norm split.
///
/// `BranchOnly` is the default: the server averages the shared branch and
/// nothing else. `BranchAndEncoder` additionally aggregates the shared-feature
/// encoder, which is architecturally identical across clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharedScope {
    BranchOnly,
    BranchAndEncoder,
}

/// Covariate widths of one client's rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientDims {
    pub shared: usize,
    pub private: usize,
}

impl ClientDims {
    pub fn full(&self) -> usize {
        self.shared + self.private
    }
}

/// Architecture knobs common to every client in a federation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHyperparams {
    /// Width of each latent code (and of each encoder's mean/log-variance
    /// halves).
    pub z_dim: usize,
    /// Output width of each branch layer; the length sets the branch depth.
    pub branch_widths: Vec<usize>,
    /// Hidden width of the single-hidden-layer encoders.
    pub encoder_width: usize,
    pub outcome_kind: OutcomeKind,
}

impl Default for ModelHyperparams {
    fn default() -> Self {
        ModelHyperparams {
            z_dim: 8,
            branch_widths: vec![16, 16],
            encoder_width: 16,
            outcome_kind: OutcomeKind::Continuous,
        }
    }
}

impl ModelHyperparams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.z_dim == 0 {
            return Err(ModelError::InvalidConfig("z_dim must be at least 1".into()));
        }
        if self.encoder_width == 0 {
            return Err(ModelError::InvalidConfig("encoder_width must be at least 1".into()));
        }
        if self.branch_widths.is_empty() {
            return Err(ModelError::InvalidConfig("branch_widths must not be empty".into()));
        }
        if self.branch_widths.contains(&0) {
            return Err(ModelError::InvalidConfig("branch widths must all be at least 1".into()));
        }
        Ok(())
    }

    fn head_activation(&self) -> Activation {
        match self.outcome_kind {
            OutcomeKind::Continuous => Activation::Identity,
            OutcomeKind::Binary => Activation::Sigmoid,
        }
    }
}

/// One client's full parameter set.
///
/// The three encoders map a covariate block to `[mean | log_var]` of a
/// diagonal Gaussian over `z_dim` latents. Branch layer `l` of the specific
/// branch takes `[specific activation l-1 | shared activation l-1]`, so its
/// input width is twice its shared counterpart's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisentangleModel {
    pub dims: ClientDims,
    pub hyper: ModelHyperparams,
    pub shared_encoder: Vec<LayerParams>,
    pub private_encoder: Vec<LayerParams>,
    pub reference_encoder: Vec<LayerParams>,
    pub shared_branch: Vec<LayerParams>,
    pub specific_branch: Vec<LayerParams>,
    pub head_mu0: LayerParams,
    pub head_mu1: LayerParams,
}

// Per-component init streams. Components whose architecture does not depend
// on the client's private width draw from streams keyed only by (seed, INIT,
// tag), so every client starts from bit-identical shared parts.
const TAG_SHARED_ENCODER: u64 = 1;
const TAG_PRIVATE_ENCODER: u64 = 2;
const TAG_REFERENCE_ENCODER: u64 = 3;
const TAG_SHARED_BRANCH: u64 = 4;
const TAG_SPECIFIC_BRANCH: u64 = 5;
const TAG_HEAD_MU0: u64 = 6;
const TAG_HEAD_MU1: u64 = 7;

fn init_encoder(in_dim: usize, hyper: &ModelHyperparams, seed: u64, tag: u64) -> Vec<LayerParams> {
    let mut rng = derive_rng(seed, &[purpose::INIT, tag]);
    vec![
        LayerParams::init(hyper.encoder_width, in_dim, Activation::Relu, &mut rng),
        LayerParams::init(2 * hyper.z_dim, hyper.encoder_width, Activation::Identity, &mut rng),
    ]
}

/// Build a freshly initialized model. Clients constructed with the same
/// `seed` and hyperparameters get bit-identical shared encoders, shared
/// branches, and heads regardless of their private covariate width.
pub fn init_model(dims: ClientDims, hyper: &ModelHyperparams, seed: u64) -> Result<DisentangleModel, ModelError> {
    hyper.validate()?;
    if dims.shared == 0 {
        return Err(ModelError::InvalidConfig("shared covariate width must be at least 1".into()));
    }
    if dims.private == 0 {
        return Err(ModelError::InvalidConfig("private covariate width must be at least 1".into()));
    }

    let mut shared_branch = Vec::with_capacity(hyper.branch_widths.len());
    let mut specific_branch = Vec::with_capacity(hyper.branch_widths.len());
    {
        let mut rng_s = derive_rng(seed, &[purpose::INIT, TAG_SHARED_BRANCH]);
        let mut rng_p = derive_rng(seed, &[purpose::INIT, TAG_SPECIFIC_BRANCH]);
        let mut prev = hyper.z_dim;
        for &width in &hyper.branch_widths {
            shared_branch.push(LayerParams::init(width, prev, Activation::Relu, &mut rng_s));
            specific_branch.push(LayerParams::init(width, 2 * prev, Activation::Relu, &mut rng_p));
            prev = width;
        }
    }
    let top = *hyper.branch_widths.last().expect("validated non-empty");
    let head_act = hyper.head_activation();
    let head_mu0 = LayerParams::init(1, top, head_act, &mut derive_rng(seed, &[purpose::INIT, TAG_HEAD_MU0]));
    let head_mu1 = LayerParams::init(1, top, head_act, &mut derive_rng(seed, &[purpose::INIT, TAG_HEAD_MU1]));

    Ok(DisentangleModel {
        dims,
        hyper: hyper.clone(),
        shared_encoder: init_encoder(dims.shared, hyper, seed, TAG_SHARED_ENCODER),
        private_encoder: init_encoder(dims.private, hyper, seed, TAG_PRIVATE_ENCODER),
        reference_encoder: init_encoder(dims.full(), hyper, seed, TAG_REFERENCE_ENCODER),
        shared_branch,
        specific_branch,
        head_mu0,
        head_mu1,
    })
}

impl DisentangleModel {
    /// Branch depth.
    pub fn depth(&self) -> usize {
        self.hyper.branch_widths.len()
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let stacks = [
            &self.shared_encoder,
            &self.private_encoder,
            &self.reference_encoder,
            &self.shared_branch,
            &self.specific_branch,
        ];
        let from_stacks: usize = stacks.iter().map(|s| flat_len(s)).sum();
        from_stacks + self.head_mu0.param_count() + self.head_mu1.param_count()
    }

    /// Length of the flat vector [`Self::shared_flat`] produces.
    pub fn shared_flat_len(&self, scope: SharedScope) -> usize {
        match scope {
            SharedScope::BranchOnly => flat_len(&self.shared_branch),
            SharedScope::BranchAndEncoder => flat_len(&self.shared_branch) + flat_len(&self.shared_encoder),
        }
    }

    /// Flatten the aggregated scope to one vector: shared branch first
    /// (per layer: weights row-major, then biases), then — under
    /// `BranchAndEncoder` — the shared encoder in the same layout.
    pub fn shared_flat(&self, scope: SharedScope) -> Vec<f64> {
        let mut flat = flatten_layers(&self.shared_branch);
        if scope == SharedScope::BranchAndEncoder {
            flat.extend(flatten_layers(&self.shared_encoder));
        }
        flat
    }

    /// Overwrite the aggregated scope from a flat vector laid out as
    /// [`Self::shared_flat`] produces it.
    pub fn load_shared_flat(&mut self, scope: SharedScope, flat: &[f64]) -> Result<(), ModelError> {
        let expected = self.shared_flat_len(scope);
        if flat.len() != expected {
            return Err(ModelError::dim("load_shared_flat", expected, flat.len()));
        }
        let branch_len = flat_len(&self.shared_branch);
        load_flat(&mut self.shared_branch, &flat[..branch_len])?;
        if scope == SharedScope::BranchAndEncoder {
            load_flat(&mut self.shared_encoder, &flat[branch_len..])?;
        }
        Ok(())
    }

    /// Every parameter as one flat vector (encoders, branches, heads, in the
    /// fixed field order). Diagnostic views only — training never round-trips
    /// through this.
    pub fn flatten_all(&self) -> Vec<f64> {
        let mut flat = flatten_layers(&self.shared_encoder);
        flat.extend(flatten_layers(&self.private_encoder));
        flat.extend(flatten_layers(&self.reference_encoder));
        flat.extend(flatten_layers(&self.shared_branch));
        flat.extend(flatten_layers(&self.specific_branch));
        flat.extend(flatten_layers(std::slice::from_ref(&self.head_mu0)));
        flat.extend(flatten_layers(std::slice::from_ref(&self.head_mu1)));
        flat
    }
}

/// On-disk format version for [`ModelCheckpoint`].
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized model plus a format version gate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub version: u32,
    pub model: DisentangleModel,
}

/// Write the model as versioned JSON.
pub fn save_checkpoint(model: &DisentangleModel, path: &Path) -> Result<(), ModelError> {
    let ckpt = ModelCheckpoint {
        version: CHECKPOINT_VERSION,
        model: model.clone(),
    };
    let text = serde_json::to_string_pretty(&ckpt).map_err(|e| ModelError::CheckpointFormat {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    std::fs::write(path, text).map_err(|e| ModelError::CheckpointIo {
        path: path.display().to_string(),
        source: e,
    })
}

/// Read a model back, rejecting checkpoints from a different format version.
pub fn load_checkpoint(path: &Path) -> Result<DisentangleModel, ModelError> {
    let text = std::fs::read_to_string(path).map_err(|e| ModelError::CheckpointIo {
        path: path.display().to_string(),
        source: e,
    })?;
    let ckpt: ModelCheckpoint = serde_json::from_str(&text).map_err(|e| ModelError::CheckpointFormat {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(ModelError::CheckpointFormat {
            path: path.display().to_string(),
            detail: format!(
                "version {} is not supported (this build reads version {CHECKPOINT_VERSION})",
                ckpt.version
            ),
        });
    }
    Ok(ckpt.model)
}

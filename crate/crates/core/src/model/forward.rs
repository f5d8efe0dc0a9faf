//! Forward passes: variational encoders, branch prediction, CATE estimation.

use super::params::DisentangleModel;
use super::ModelError;
use crate::kernel::{layer_forward, mlp_forward, DiagGaussian, ForwardCache, LayerCache};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Clamp bounds applied to raw encoder log-variances before they are used.
/// Outside the clamp the gradient is zero, mirroring a hard clamp.
pub(crate) const LOG_VAR_MIN: f64 = -20.0;
pub(crate) const LOG_VAR_MAX: f64 = 20.0;

/// How latent codes are produced from each posterior.
pub enum EncodeMode<'a> {
    /// Deterministic: `z` is the posterior mean.
    Mean,
    /// Reparameterized draw: `z = mean + exp(log_var / 2) * eps` with
    /// `eps ~ N(0, I)` from the given stream.
    Sample { rng: &'a mut ChaCha8Rng },
}

/// The standard-normal draws one sample's three codes were built from.
#[derive(Debug, Clone)]
pub(crate) struct EncodeEps {
    pub shared: Vec<f64>,
    pub private: Vec<f64>,
    pub reference: Vec<f64>,
}

pub(crate) struct EncoderCaches {
    pub shared: ForwardCache,
    pub private: ForwardCache,
    pub reference: ForwardCache,
}

/// Posteriors, latent codes, and the backprop state for one covariate row.
pub struct EncodeOutput {
    pub q_shared: DiagGaussian,
    pub q_private: DiagGaussian,
    pub q_reference: DiagGaussian,
    pub z_shared: Vec<f64>,
    pub z_private: Vec<f64>,
    pub z_reference: Vec<f64>,
    pub(crate) caches: EncoderCaches,
    pub(crate) eps: Option<EncodeEps>,
}

fn run_encoder(
    layers: &[crate::kernel::LayerParams],
    x: &[f64],
    what: &str,
) -> Result<(DiagGaussian, ForwardCache), ModelError> {
    let cache = mlp_forward(layers, x)?;
    let raw = cache.output();
    let z_dim = raw.len() / 2;
    let mean = raw[..z_dim].to_vec();
    let log_var: Vec<f64> = raw[z_dim..].iter().map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX)).collect();
    let q = DiagGaussian::new(mean, log_var).map_err(|e| {
        ModelError::Kernel(crate::kernel::KernelError::InvalidValue {
            context: format!("{what} encoder output"),
            detail: e.to_string(),
        })
    })?;
    Ok((q, cache))
}

fn draw_eps(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect()
}

/// Encode one row with eps supplied explicitly (`None` = Mean mode). The
/// training loop uses this so that sampling stays reproducible per row.
pub(crate) fn encode_with_eps(
    model: &DisentangleModel,
    x_shared: &[f64],
    x_private: &[f64],
    eps: Option<EncodeEps>,
) -> Result<EncodeOutput, ModelError> {
    if x_shared.len() != model.dims.shared {
        return Err(ModelError::dim("encode shared input", model.dims.shared, x_shared.len()));
    }
    if x_private.len() != model.dims.private {
        return Err(ModelError::dim("encode private input", model.dims.private, x_private.len()));
    }
    let mut x_full = Vec::with_capacity(model.dims.full());
    x_full.extend_from_slice(x_shared);
    x_full.extend_from_slice(x_private);

    let (q_shared, c_shared) = run_encoder(&model.shared_encoder, x_shared, "shared")?;
    let (q_private, c_private) = run_encoder(&model.private_encoder, x_private, "private")?;
    let (q_reference, c_reference) = run_encoder(&model.reference_encoder, &x_full, "reference")?;

    let (z_shared, z_private, z_reference) = match &eps {
        None => (
            q_shared.mean.clone(),
            q_private.mean.clone(),
            q_reference.mean.clone(),
        ),
        Some(e) => (
            q_shared.sample_with(&e.shared)?,
            q_private.sample_with(&e.private)?,
            q_reference.sample_with(&e.reference)?,
        ),
    };

    Ok(EncodeOutput {
        q_shared,
        q_private,
        q_reference,
        z_shared,
        z_private,
        z_reference,
        caches: EncoderCaches {
            shared: c_shared,
            private: c_private,
            reference: c_reference,
        },
        eps,
    })
}

/// Encode one covariate row into the three posteriors and latent codes.
pub fn encode(
    model: &DisentangleModel,
    x_shared: &[f64],
    x_private: &[f64],
    mode: EncodeMode<'_>,
) -> Result<EncodeOutput, ModelError> {
    let z = model.hyper.z_dim;
    let eps = match mode {
        EncodeMode::Mean => None,
        EncodeMode::Sample { rng } => Some(EncodeEps {
            shared: draw_eps(rng, z),
            private: draw_eps(rng, z),
            reference: draw_eps(rng, z),
        }),
    };
    encode_with_eps(model, x_shared, x_private, eps)
}

/// Potential-outcome estimates for one latent pair, plus backprop state.
pub struct PredictOutput {
    pub mu0: f64,
    pub mu1: f64,
    pub(crate) shared_caches: Vec<LayerCache>,
    pub(crate) specific_caches: Vec<LayerCache>,
    pub(crate) head0_cache: LayerCache,
    pub(crate) head1_cache: LayerCache,
}

/// Run both branches and the twin heads.
///
/// Shared trace: `s_0 = z_s`, `s_l = F_l^s(s_{l-1})`. Specific trace:
/// layer `l` consumes `[p_{l-1} | s_{l-1}]`, starting from `p_0 = z_p`, so
/// every depth of the client-specific branch reads the shared activation one
/// level below. Heads map the final specific activation to scalars.
pub fn predict_pos(
    model: &DisentangleModel,
    z_shared: &[f64],
    z_private: &[f64],
) -> Result<PredictOutput, ModelError> {
    let z = model.hyper.z_dim;
    if z_shared.len() != z {
        return Err(ModelError::dim("predict_pos z_shared", z, z_shared.len()));
    }
    if z_private.len() != z {
        return Err(ModelError::dim("predict_pos z_private", z, z_private.len()));
    }

    let depth = model.depth();
    let mut shared_caches = Vec::with_capacity(depth);
    let mut specific_caches = Vec::with_capacity(depth);
    let mut shared_prev = z_shared.to_vec();
    let mut spec_prev = z_private.to_vec();
    for l in 0..depth {
        let mut joint = Vec::with_capacity(spec_prev.len() + shared_prev.len());
        joint.extend_from_slice(&spec_prev);
        joint.extend_from_slice(&shared_prev);
        let sc = layer_forward(&model.shared_branch[l], &shared_prev)?;
        let pc = layer_forward(&model.specific_branch[l], &joint)?;
        shared_prev = sc.output.clone();
        spec_prev = pc.output.clone();
        shared_caches.push(sc);
        specific_caches.push(pc);
    }

    let head0_cache = layer_forward(&model.head_mu0, &spec_prev)?;
    let head1_cache = layer_forward(&model.head_mu1, &spec_prev)?;
    let mu0 = head0_cache.output[0];
    let mu1 = head1_cache.output[0];
    Ok(PredictOutput {
        mu0,
        mu1,
        shared_caches,
        specific_caches,
        head0_cache,
        head1_cache,
    })
}

/// Deterministic per-row effect estimate: Mean-mode encode, predict, and
/// return `mu1 - mu0`.
pub fn estimate_cate(
    model: &DisentangleModel,
    x_shared: &[f64],
    x_private: &[f64],
) -> Result<f64, ModelError> {
    let enc = encode(model, x_shared, x_private, EncodeMode::Mean)?;
    let pred = predict_pos(model, &enc.z_shared, &enc.z_private)?;
    Ok(pred.mu1 - pred.mu0)
}

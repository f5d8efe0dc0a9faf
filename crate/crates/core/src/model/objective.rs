//! The composite local objective and its hand-derived gradients.

use super::forward::{encode_with_eps, predict_pos, EncodeEps, PredictOutput, LOG_VAR_MAX, LOG_VAR_MIN};
use super::params::{DisentangleModel, OutcomeKind, SharedScope};
use super::ModelError;
use crate::datagen::ClientDataset;
use crate::kernel::{
    bce_loss, kl_diag_gaussian, kl_grad_wrt_q, layer_backward, layer_forward, mlp_backward, mse_loss,
    DiagGaussian, ForwardCache, KlGrad, LayerGrad, LayerParams,
};
use crate::rng::{derive_rng, purpose};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// How latent codes are drawn inside the objective.
///
/// `Sample` keys each row's standard-normal draws to `(seed, row index)`, so
/// a row's noise does not depend on which batch it lands in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Mean,
    Sample { seed: u64 },
}

/// Weights and switches for [`local_objective`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSettings {
    pub lambda_kl: f64,
    pub lambda_prox: f64,
    /// Scale on the factual-outcome term (and on the reference encoder's
    /// auxiliary fit, which mimics it). 1.0 except in ablations.
    pub outcome_weight: f64,
    /// Which parameters the proximal anchor covers; must match the
    /// aggregation scope.
    pub scope: SharedScope,
    pub mode: SampleMode,
    /// Restore the sign-flipped control-outcome term (an ablation; the
    /// default fits controls with a positive loss like any factual sample).
    pub negate_control_loss: bool,
}

impl Default for ObjectiveSettings {
    fn default() -> Self {
        ObjectiveSettings {
            lambda_kl: 0.1,
            lambda_prox: 0.01,
            outcome_weight: 1.0,
            scope: SharedScope::BranchOnly,
            mode: SampleMode::Mean,
            negate_control_loss: false,
        }
    }
}

/// Loss components for one batch.
///
/// Invariant: `total = outcome + lambda_kl * encoder_kl + lambda_prox *
/// proximal`. `reference_fit` is the auxiliary loss that trains the reference
/// encoder through a detached copy of the predictive path; it is reported
/// alongside but never folded into `total`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Factual-outcome term (mean over the batch, scaled by
    /// `outcome_weight`).
    pub outcome: f64,
    /// Mean of KL(q_shared || q_ref) + KL(q_private || q_ref).
    pub encoder_kl: f64,
    /// Squared distance between the local shared scope and the anchor; 0.0
    /// when no anchor was supplied.
    pub proximal: f64,
    /// Auxiliary reference-encoder fit, scaled by `outcome_weight`.
    pub reference_fit: f64,
    pub lambda_kl: f64,
    pub lambda_prox: f64,
    pub total: f64,
}

/// Per-parameter gradients for every component of a [`DisentangleModel`].
#[derive(Debug, Clone)]
pub struct ModelGradients {
    pub shared_encoder: Vec<LayerGrad>,
    pub private_encoder: Vec<LayerGrad>,
    pub reference_encoder: Vec<LayerGrad>,
    pub shared_branch: Vec<LayerGrad>,
    pub specific_branch: Vec<LayerGrad>,
    pub head_mu0: LayerGrad,
    pub head_mu1: LayerGrad,
}

fn zeros_for(layers: &[LayerParams]) -> Vec<LayerGrad> {
    layers.iter().map(LayerGrad::zeros_like).collect()
}

fn stack_sq_norm(grads: &[LayerGrad]) -> f64 {
    grads.iter().map(LayerGrad::sq_norm).sum()
}

fn extend_flat(flat: &mut Vec<f64>, grads: &[LayerGrad]) {
    for g in grads {
        flat.extend_from_slice(g.weight.as_slice());
        flat.extend_from_slice(&g.bias);
    }
}

impl ModelGradients {
    pub fn zeros_like(model: &DisentangleModel) -> ModelGradients {
        ModelGradients {
            shared_encoder: zeros_for(&model.shared_encoder),
            private_encoder: zeros_for(&model.private_encoder),
            reference_encoder: zeros_for(&model.reference_encoder),
            shared_branch: zeros_for(&model.shared_branch),
            specific_branch: zeros_for(&model.specific_branch),
            head_mu0: LayerGrad::zeros_like(&model.head_mu0),
            head_mu1: LayerGrad::zeros_like(&model.head_mu1),
        }
    }

    /// Squared norm of the gradient over the aggregated scope.
    pub fn shared_sq_norm(&self, scope: SharedScope) -> f64 {
        let mut s = stack_sq_norm(&self.shared_branch);
        if scope == SharedScope::BranchAndEncoder {
            s += stack_sq_norm(&self.shared_encoder);
        }
        s
    }

    /// Squared norm of the gradient over everything outside the scope.
    pub fn private_sq_norm(&self, scope: SharedScope) -> f64 {
        let mut s = stack_sq_norm(&self.private_encoder)
            + stack_sq_norm(&self.reference_encoder)
            + stack_sq_norm(&self.specific_branch)
            + self.head_mu0.sq_norm()
            + self.head_mu1.sq_norm();
        if scope == SharedScope::BranchOnly {
            s += stack_sq_norm(&self.shared_encoder);
        }
        s
    }

    /// One flat vector in the same layout as
    /// [`DisentangleModel::flatten_all`].
    pub fn flatten_all(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        extend_flat(&mut flat, &self.shared_encoder);
        extend_flat(&mut flat, &self.private_encoder);
        extend_flat(&mut flat, &self.reference_encoder);
        extend_flat(&mut flat, &self.shared_branch);
        extend_flat(&mut flat, &self.specific_branch);
        extend_flat(&mut flat, std::slice::from_ref(&self.head_mu0));
        extend_flat(&mut flat, std::slice::from_ref(&self.head_mu1));
        flat
    }

    /// Add `factor * diff` onto the scope's gradients, `diff` laid out as
    /// [`DisentangleModel::shared_flat`].
    fn add_scope_flat(&mut self, scope: SharedScope, diff: &[f64], factor: f64) {
        fn add_layer(g: &mut LayerGrad, diff: &[f64], mut off: usize, factor: f64) -> usize {
            for v in g.weight.as_mut_slice() {
                *v += factor * diff[off];
                off += 1;
            }
            for v in g.bias.iter_mut() {
                *v += factor * diff[off];
                off += 1;
            }
            off
        }
        let mut off = 0;
        for g in self.shared_branch.iter_mut() {
            off = add_layer(g, diff, off, factor);
        }
        if scope == SharedScope::BranchAndEncoder {
            for g in self.shared_encoder.iter_mut() {
                off = add_layer(g, diff, off, factor);
            }
        }
        debug_assert_eq!(off, diff.len());
    }
}

/// KL alignment of the two marginal posteriors against the reference
/// posterior, which is treated as a constant (no gradient reaches the
/// reference encoder through this term).
pub fn encoder_loss(
    q_shared: &DiagGaussian,
    q_private: &DiagGaussian,
    q_reference: &DiagGaussian,
) -> Result<f64, ModelError> {
    Ok(kl_diag_gaussian(q_shared, q_reference)? + kl_diag_gaussian(q_private, q_reference)?)
}

/// Per-sample factual loss and its derivative in the predicted value.
fn outcome_loss_grad(kind: OutcomeKind, mu: f64, y: f64) -> Result<(f64, f64), ModelError> {
    let (loss, grad) = match kind {
        OutcomeKind::Continuous => mse_loss(&[mu], &[y])?,
        OutcomeKind::Binary => bce_loss(&[mu], &[y])?,
    };
    Ok((loss, grad[0]))
}

/// Backprop `d loss / d mu` through heads and both branches, accumulating
/// parameter gradients and returning the gradients on the latent codes.
fn backprop_prediction(
    model: &DisentangleModel,
    pred: &PredictOutput,
    d_mu0: f64,
    d_mu1: f64,
    grads: &mut ModelGradients,
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    let depth = model.depth();
    let z = model.hyper.z_dim;
    let (g_h0, d_in0) = layer_backward(&model.head_mu0, &pred.head0_cache, &[d_mu0])?;
    grads.head_mu0.add_scaled(&g_h0, 1.0);
    let (g_h1, d_in1) = layer_backward(&model.head_mu1, &pred.head1_cache, &[d_mu1])?;
    grads.head_mu1.add_scaled(&g_h1, 1.0);
    let mut g_spec: Vec<f64> = d_in0.iter().zip(&d_in1).map(|(a, b)| a + b).collect();

    // Gradient w.r.t. each shared layer's output, fed by the specific
    // branch's concat taps. The top shared activation feeds nothing, so its
    // slot stays zero.
    let mut s_out_grad: Vec<Vec<f64>> = model
        .shared_branch
        .iter()
        .map(|l| vec![0.0; l.out_dim()])
        .collect();
    let mut dz_s = vec![0.0; z];
    let mut dz_p = vec![0.0; z];
    for l in (0..depth).rev() {
        let (g_layer, g_joint) = layer_backward(&model.specific_branch[l], &pred.specific_caches[l], &g_spec)?;
        grads.specific_branch[l].add_scaled(&g_layer, 1.0);
        let spec_w = if l == 0 { z } else { model.hyper.branch_widths[l - 1] };
        let (p_part, s_part) = g_joint.split_at(spec_w);
        if l == 0 {
            for (d, v) in dz_p.iter_mut().zip(p_part) {
                *d += v;
            }
            for (d, v) in dz_s.iter_mut().zip(s_part) {
                *d += v;
            }
        } else {
            g_spec = p_part.to_vec();
            for (d, v) in s_out_grad[l - 1].iter_mut().zip(s_part) {
                *d += v;
            }
        }
    }

    let mut g_shared = vec![0.0; model.shared_branch[depth - 1].out_dim()];
    for l in (0..depth).rev() {
        for (g, s) in g_shared.iter_mut().zip(&s_out_grad[l]) {
            *g += s;
        }
        let (g_layer, g_in) = layer_backward(&model.shared_branch[l], &pred.shared_caches[l], &g_shared)?;
        grads.shared_branch[l].add_scaled(&g_layer, 1.0);
        g_shared = g_in;
    }
    for (d, v) in dz_s.iter_mut().zip(&g_shared) {
        *d += v;
    }
    Ok((dz_s, dz_p))
}

/// Push a latent-code gradient (plus an optional scaled KL gradient) back
/// through one encoder, respecting the log-variance clamp and, in Sample
/// mode, the reparameterization.
fn backprop_encoder(
    layers: &[LayerParams],
    cache: &ForwardCache,
    dz: &[f64],
    kl_extra: Option<(&KlGrad, f64)>,
    eps: Option<&[f64]>,
    out: &mut [LayerGrad],
) -> Result<(), ModelError> {
    let two_z = cache.output().len();
    let z = two_z / 2;
    let raw_lv = &cache.output()[z..];
    let mut g = vec![0.0; two_z];
    for j in 0..z {
        g[j] = dz[j];
        let mut glv = 0.0;
        if let Some(e) = eps {
            let lv = raw_lv[j].clamp(LOG_VAR_MIN, LOG_VAR_MAX);
            glv += dz[j] * e[j] * 0.5 * (lv / 2.0).exp();
        }
        if let Some((kg, scale)) = kl_extra {
            g[j] += scale * kg.d_mean[j];
            glv += scale * kg.d_log_var[j];
        }
        if raw_lv[j] < LOG_VAR_MIN || raw_lv[j] > LOG_VAR_MAX {
            glv = 0.0;
        }
        g[z + j] = glv;
    }
    let (gr, _) = mlp_backward(layers, cache, &g)?;
    for (acc, gi) in out.iter_mut().zip(&gr) {
        acc.add_scaled(gi, 1.0);
    }
    Ok(())
}

/// Composite objective for one batch of rows, with gradients for every
/// parameter.
///
/// The returned breakdown satisfies `total = outcome + lambda_kl *
/// encoder_kl + lambda_prox * proximal`:
///
/// * outcome: mean over the batch of the factual-head loss, treated rows
///   scored on `mu1` and control rows on `mu0`;
/// * encoder_kl: mean of the two marginal-vs-reference KL terms, with the
///   reference posterior gradient-stopped;
/// * proximal: squared distance from the local shared scope to `anchor`
///   (0 when `anchor` is `None`, the local-only configuration).
///
/// The reference encoder learns from a separate auxiliary loss: its code is
/// replayed through a frozen copy of the shared branch and heads, and the
/// factual loss of that replay backpropagates into the reference encoder
/// alone (`reference_fit` in the breakdown). When `lambda_prox` is exactly
/// zero the proximal gradient pass is skipped entirely, so gradient buffers
/// are bit-identical to a run with no anchor.
pub fn local_objective(
    model: &DisentangleModel,
    data: &ClientDataset,
    indices: &[usize],
    anchor: Option<&[f64]>,
    settings: &ObjectiveSettings,
) -> Result<(LossBreakdown, ModelGradients), ModelError> {
    if indices.is_empty() {
        return Err(ModelError::BadBatch("empty batch".into()));
    }
    let treatment = data
        .treatment
        .as_ref()
        .ok_or_else(|| ModelError::BadBatch(format!("client {} has no treatment assignments", data.client_id)))?;
    let observed = data
        .observed
        .as_ref()
        .ok_or_else(|| ModelError::BadBatch(format!("client {} has no observed outcomes", data.client_id)))?;
    let n = indices.len() as f64;
    let z = model.hyper.z_dim;

    let mut grads = ModelGradients::zeros_like(model);
    let mut outcome_acc = 0.0;
    let mut kl_acc = 0.0;
    let mut ref_acc = 0.0;

    for &idx in indices {
        if idx >= data.n() {
            return Err(ModelError::BadBatch(format!(
                "row index {idx} out of range for client {} with {} rows",
                data.client_id,
                data.n()
            )));
        }
        let w = treatment[idx];
        if w > 1 {
            return Err(ModelError::BadBatch(format!(
                "row {idx} of client {} has treatment {w}, want 0 or 1",
                data.client_id
            )));
        }
        let y = observed[idx];
        if !y.is_finite() {
            return Err(ModelError::BadBatch(format!(
                "row {idx} of client {} has non-finite outcome {y}",
                data.client_id
            )));
        }
        if model.hyper.outcome_kind == OutcomeKind::Binary && y != 0.0 && y != 1.0 {
            return Err(ModelError::BadBatch(format!(
                "row {idx} of client {} has outcome {y}, binary models need 0 or 1",
                data.client_id
            )));
        }

        let eps = match settings.mode {
            SampleMode::Mean => None,
            SampleMode::Sample { seed } => {
                let mut rng = derive_rng(seed, &[purpose::ENCODE_SAMPLE, idx as u64]);
                let mut draw = |dim: usize| -> Vec<f64> {
                    (0..dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect()
                };
                Some(EncodeEps {
                    shared: draw(z),
                    private: draw(z),
                    reference: draw(z),
                })
            }
        };
        let enc = encode_with_eps(model, data.x_shared(idx), data.x_private(idx), eps)?;
        let pred = predict_pos(model, &enc.z_shared, &enc.z_private)?;

        // Factual outcome term: the observed arm's head is scored, the other
        // is untouched.
        let sign = if w == 0 && settings.negate_control_loss { -1.0 } else { 1.0 };
        let (l_val, l_grad) = if w == 1 {
            outcome_loss_grad(model.hyper.outcome_kind, pred.mu1, y)?
        } else {
            outcome_loss_grad(model.hyper.outcome_kind, pred.mu0, y)?
        };
        outcome_acc += sign * l_val;
        let scale = settings.outcome_weight * sign / n;
        let (d_mu0, d_mu1) = if w == 1 { (0.0, scale * l_grad) } else { (scale * l_grad, 0.0) };
        let (dz_s, dz_p) = backprop_prediction(model, &pred, d_mu0, d_mu1, &mut grads)?;

        // KL alignment, reference gradient-stopped.
        let (kl_s, kg_s) = kl_grad_wrt_q(&enc.q_shared, &enc.q_reference)?;
        let (kl_p, kg_p) = kl_grad_wrt_q(&enc.q_private, &enc.q_reference)?;
        kl_acc += kl_s + kl_p;

        let eps_s = enc.eps.as_ref().map(|e| e.shared.as_slice());
        let eps_p = enc.eps.as_ref().map(|e| e.private.as_slice());
        let eps_r = enc.eps.as_ref().map(|e| e.reference.as_slice());
        backprop_encoder(
            &model.shared_encoder,
            &enc.caches.shared,
            &dz_s,
            Some((&kg_s, settings.lambda_kl / n)),
            eps_s,
            &mut grads.shared_encoder,
        )?;
        backprop_encoder(
            &model.private_encoder,
            &enc.caches.private,
            &dz_p,
            Some((&kg_p, settings.lambda_kl / n)),
            eps_p,
            &mut grads.private_encoder,
        )?;

        // Auxiliary reference fit: replay z* through a frozen copy of the
        // shared branch and heads; only the reference encoder learns from it.
        let mut aux_caches = Vec::with_capacity(model.depth());
        let mut cur = enc.z_reference.clone();
        for layer in &model.shared_branch {
            let c = layer_forward(layer, &cur)?;
            cur = c.output.clone();
            aux_caches.push(c);
        }
        let h0 = layer_forward(&model.head_mu0, &cur)?;
        let h1 = layer_forward(&model.head_mu1, &cur)?;
        let (l_ref, l_ref_grad) = if w == 1 {
            outcome_loss_grad(model.hyper.outcome_kind, h1.output[0], y)?
        } else {
            outcome_loss_grad(model.hyper.outcome_kind, h0.output[0], y)?
        };
        ref_acc += sign * l_ref;
        let ref_scale = settings.outcome_weight * sign / n;
        let (d_r0, d_r1) = if w == 1 {
            (0.0, ref_scale * l_ref_grad)
        } else {
            (ref_scale * l_ref_grad, 0.0)
        };
        let (_, d_in0) = layer_backward(&model.head_mu0, &h0, &[d_r0])?;
        let (_, d_in1) = layer_backward(&model.head_mu1, &h1, &[d_r1])?;
        let mut d_cur: Vec<f64> = d_in0.iter().zip(&d_in1).map(|(a, b)| a + b).collect();
        for (layer, cache) in model.shared_branch.iter().zip(&aux_caches).rev() {
            let (_, d_prev) = layer_backward(layer, cache, &d_cur)?;
            d_cur = d_prev;
        }
        backprop_encoder(
            &model.reference_encoder,
            &enc.caches.reference,
            &d_cur,
            None,
            eps_r,
            &mut grads.reference_encoder,
        )?;
    }

    let outcome = settings.outcome_weight * outcome_acc / n;
    let encoder_kl = kl_acc / n;
    let reference_fit = settings.outcome_weight * ref_acc / n;

    let mut proximal = 0.0;
    if let Some(anchor) = anchor {
        let local = model.shared_flat(settings.scope);
        if anchor.len() != local.len() {
            return Err(ModelError::dim("local_objective anchor", local.len(), anchor.len()));
        }
        let diff: Vec<f64> = local.iter().zip(anchor).map(|(l, a)| l - a).collect();
        proximal = diff.iter().map(|d| d * d).sum();
        if settings.lambda_prox != 0.0 {
            grads.add_scope_flat(settings.scope, &diff, 2.0 * settings.lambda_prox);
        }
    }

    let total = outcome + settings.lambda_kl * encoder_kl + settings.lambda_prox * proximal;
    Ok((
        LossBreakdown {
            outcome,
            encoder_kl,
            proximal,
            reference_fit,
            lambda_kl: settings.lambda_kl,
            lambda_prox: settings.lambda_prox,
            total,
        },
        grads,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{finite_diff_gradcheck, flat_len, load_flat, Matrix};
    use crate::model::params::{init_model, ClientDims, ModelHyperparams};

    fn tiny_hyper(kind: OutcomeKind) -> ModelHyperparams {
        ModelHyperparams {
            z_dim: 2,
            branch_widths: vec![4, 4],
            encoder_width: 4,
            outcome_kind: kind,
        }
    }

    fn tiny_dataset(kind: OutcomeKind) -> ClientDataset {
        let covariates = Matrix::from_flat(
            3,
            5,
            vec![
                0.5, -1.2, 0.3, 0.8, -0.4, //
                1.1, 0.2, -0.7, -1.5, 0.6, //
                -0.3, 0.9, 1.4, 0.1, -1.0,
            ],
        )
        .unwrap();
        let observed = match kind {
            OutcomeKind::Continuous => vec![0.7, -0.2, 1.3],
            OutcomeKind::Binary => vec![1.0, 0.0, 1.0],
        };
        ClientDataset {
            client_id: 0,
            shared_dim: 3,
            private_dim: 2,
            covariates,
            treatment: Some(vec![1, 0, 1]),
            observed: Some(observed),
            true_y0: None,
            true_y1: None,
        }
    }

    /// Overwrite every parameter from a vector in `flatten_all` layout.
    fn set_all(m: &mut DisentangleModel, flat: &[f64]) {
        let mut off = 0;
        let take = |layers: &mut [LayerParams], flat: &[f64], off: &mut usize| {
            let len = flat_len(layers);
            load_flat(layers, &flat[*off..*off + len]).unwrap();
            *off += len;
        };
        take(&mut m.shared_encoder, flat, &mut off);
        take(&mut m.private_encoder, flat, &mut off);
        take(&mut m.reference_encoder, flat, &mut off);
        take(&mut m.shared_branch, flat, &mut off);
        take(&mut m.specific_branch, flat, &mut off);
        take(std::slice::from_mut(&mut m.head_mu0), flat, &mut off);
        take(std::slice::from_mut(&mut m.head_mu1), flat, &mut off);
        assert_eq!(off, flat.len());
    }

    /// Index range of the reference encoder inside `flatten_all`.
    fn reference_segment(m: &DisentangleModel) -> std::ops::Range<usize> {
        let start = flat_len(&m.shared_encoder) + flat_len(&m.private_encoder);
        start..start + flat_len(&m.reference_encoder)
    }

    fn zero_all(m: &mut DisentangleModel) {
        let flat = vec![0.0; m.param_count()];
        set_all(m, &flat);
    }

    #[test]
    fn all_zero_model_on_zero_targets_is_exactly_zero() {
        let mut m = init_model(ClientDims { shared: 3, private: 2 }, &tiny_hyper(OutcomeKind::Continuous), 1).unwrap();
        zero_all(&mut m);
        let mut data = tiny_dataset(OutcomeKind::Continuous);
        data.observed = Some(vec![0.0, 0.0, 0.0]);
        let anchor = m.shared_flat(SharedScope::BranchOnly);
        let settings = ObjectiveSettings::default();
        let (b, _) = local_objective(&m, &data, &[0, 1, 2], Some(&anchor), &settings).unwrap();
        assert_eq!(b.outcome, 0.0);
        assert_eq!(b.encoder_kl, 0.0);
        assert_eq!(b.proximal, 0.0);
        assert_eq!(b.reference_fit, 0.0);
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn proximal_hand_value() {
        let m = init_model(ClientDims { shared: 3, private: 2 }, &tiny_hyper(OutcomeKind::Continuous), 3).unwrap();
        let mut anchor = m.shared_flat(SharedScope::BranchOnly);
        anchor[0] += 1.0;
        anchor[1] -= 1.0;
        let settings = ObjectiveSettings {
            lambda_prox: 1.0,
            ..ObjectiveSettings::default()
        };
        let (b, _) = local_objective(&m, &tiny_dataset(OutcomeKind::Continuous), &[0], Some(&anchor), &settings).unwrap();
        assert_eq!(b.proximal, 2.0);
        assert!((b.total - (b.outcome + b.lambda_kl * b.encoder_kl + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn treated_sample_leaves_control_head_untouched() {
        let m = init_model(ClientDims { shared: 3, private: 2 }, &tiny_hyper(OutcomeKind::Continuous), 5).unwrap();
        let data = tiny_dataset(OutcomeKind::Continuous);
        let settings = ObjectiveSettings {
            lambda_kl: 0.0,
            lambda_prox: 0.0,
            ..ObjectiveSettings::default()
        };
        // Row 0 is treated.
        let (_, g) = local_objective(&m, &data, &[0], None, &settings).unwrap();
        assert!(g.head_mu0.sq_norm() == 0.0, "mu0 head must not learn from a treated row");
        assert!(g.head_mu1.sq_norm() > 0.0);
        // Row 1 is control: roles swap.
        let (_, g) = local_objective(&m, &data, &[1], None, &settings).unwrap();
        assert!(g.head_mu1.sq_norm() == 0.0);
        assert!(g.head_mu0.sq_norm() > 0.0);
    }

    #[test]
    fn negate_control_loss_flips_the_control_term() {
        let m = init_model(ClientDims { shared: 3, private: 2 }, &tiny_hyper(OutcomeKind::Continuous), 5).unwrap();
        let data = tiny_dataset(OutcomeKind::Continuous);
        let base = ObjectiveSettings {
            lambda_kl: 0.0,
            lambda_prox: 0.0,
            ..ObjectiveSettings::default()
        };
        let flipped = ObjectiveSettings {
            negate_control_loss: true,
            ..base
        };
        let (b0, _) = local_objective(&m, &data, &[1], None, &base).unwrap();
        let (b1, _) = local_objective(&m, &data, &[1], None, &flipped).unwrap();
        assert_eq!(b1.outcome, -b0.outcome);
        // Treated rows are unaffected by the flag.
        let (t0, _) = local_objective(&m, &data, &[0], None, &base).unwrap();
        let (t1, _) = local_objective(&m, &data, &[0], None, &flipped).unwrap();
        assert_eq!(t0.outcome, t1.outcome);
    }

    #[test]
    fn outcome_weight_scales_outcome_term_and_gradients() {
        let m = init_model(ClientDims { shared: 3, private: 2 }, &tiny_hyper(OutcomeKind::Continuous), 7).unwrap();
        let data = tiny_dataset(OutcomeKind::Continuous);
        let base = ObjectiveSettings {
            lambda_kl: 0.0,
            lambda_prox: 0.0,
            ..ObjectiveSettings::default()
        };
        let doubled = ObjectiveSettings {
            outcome_weight: 2.0,
            ..base
        };
        let (b1, g1) = local_objective(&m, &data, &[0, 1, 2], None, &base).unwrap();
        let (b2, g2) = local_objective(&m, &data, &[0, 1, 2], None, &doubled).unwrap();
        assert!((b2.outcome - 2.0 * b1.outcome).abs() < 1e-14);
        assert!((b2.reference_fit - 2.0 * b1.reference_fit).abs() < 1e-14);
        let f1 = g1.flatten_all();
        let f2 = g2.flatten_all();
        for (a, b) in f1.iter().zip(&f2) {
            assert!((b - 2.0 * a).abs() <= 1e-14 * a.abs().max(1.0), "{b} != 2*{a}");
        }
    }

    #[test]
    fn top_shared_layer_gets_no_outcome_gradient_lower_layers_do() {
        // The top shared activation feeds neither the heads nor any concat
        // tap, so with only the outcome term active its layer cannot learn;
        // the layers below it receive gradient through the specific branch's
        // taps.
        let m = init_model(ClientDims { shared: 3, private: 2 }, &tiny_hyper(OutcomeKind::Continuous), 9).unwrap();
        let data = tiny_dataset(OutcomeKind::Continuous);
        let settings = ObjectiveSettings {
            lambda_kl: 0.0,
            lambda_prox: 0.0,
            ..ObjectiveSettings::default()
        };
        let (_, g) = local_objective(&m, &data, &[0, 1, 2], None, &settings).unwrap();
        assert_eq!(g.shared_branch.last().unwrap().sq_norm(), 0.0);
        assert!(g.shared_branch[0].sq_norm() > 0.0);
    }

    #[test]
    fn bad_batches_are_rejected() {
        let m = init_model(ClientDims { shared: 3, private: 2 }, &tiny_hyper(OutcomeKind::Continuous), 5).unwrap();
        let settings = ObjectiveSettings::default();
        let data = tiny_dataset(OutcomeKind::Continuous);
        assert!(matches!(
            local_objective(&m, &data, &[], None, &settings),
            Err(ModelError::BadBatch(_))
        ));
        assert!(matches!(
            local_objective(&m, &data, &[7], None, &settings),
            Err(ModelError::BadBatch(_))
        ));
        let mut unlabeled = data.clone();
        unlabeled.treatment = None;
        assert!(matches!(
            local_objective(&m, &unlabeled, &[0], None, &settings),
            Err(ModelError::BadBatch(_))
        ));
        let anchor = vec![0.0; 3];
        assert!(matches!(
            local_objective(&m, &data, &[0], Some(&anchor), &settings),
            Err(ModelError::Dimension { .. })
        ));
        let mut nonbinary = tiny_dataset(OutcomeKind::Binary);
        nonbinary.observed = Some(vec![0.5, 0.0, 1.0]);
        let mb = init_model(ClientDims { shared: 3, private: 2 }, &tiny_hyper(OutcomeKind::Binary), 5).unwrap();
        assert!(matches!(
            local_objective(&mb, &nonbinary, &[0], None, &settings),
            Err(ModelError::BadBatch(_))
        ));
    }

    #[test]
    fn encoder_loss_hand_values() {
        let q = DiagGaussian::standard(2);
        assert_eq!(encoder_loss(&q, &q, &q).unwrap(), 0.0);
        // Both marginals N(0,1), reference N(1,1), one dim: each KL is 0.5.
        let q1 = DiagGaussian::standard(1);
        let q2 = DiagGaussian::standard(1);
        let r = DiagGaussian::new(vec![1.0], vec![0.0]).unwrap();
        assert!((encoder_loss(&q1, &q2, &r).unwrap() - 1.0).abs() < 1e-12);
    }

    /// The module's oracle: every analytic gradient against central
    /// differences, split into the two parameter groups that see different
    /// objectives (the reference encoder trains on the auxiliary fit; all
    /// other parameters train on the total).
    #[test]
    fn end_to_end_gradcheck_against_finite_differences() {
        for (case, kind, mode) in [
            (0u64, OutcomeKind::Continuous, SampleMode::Mean),
            (1, OutcomeKind::Continuous, SampleMode::Sample { seed: 99 }),
            (2, OutcomeKind::Binary, SampleMode::Mean),
            (3, OutcomeKind::Binary, SampleMode::Sample { seed: 7 }),
        ] {
            let model = init_model(ClientDims { shared: 3, private: 2 }, &tiny_hyper(kind), 21 + case).unwrap();
            let data = tiny_dataset(kind);
            let mut anchor = model.shared_flat(SharedScope::BranchOnly);
            for (i, a) in anchor.iter_mut().enumerate() {
                *a += 0.05 * (i as f64 % 3.0 - 1.0);
            }
            let settings = ObjectiveSettings {
                mode,
                ..ObjectiveSettings::default()
            };
            let (_, grads) = local_objective(&model, &data, &[0, 1, 2], Some(&anchor), &settings).unwrap();
            let full = model.flatten_all();
            let gfull = grads.flatten_all();
            let seg = reference_segment(&model);

            // Group A: everything but the reference encoder, against the
            // total objective.
            let mut params_a: Vec<f64> = full
                .iter()
                .enumerate()
                .filter(|(i, _)| !seg.contains(i))
                .map(|(_, v)| *v)
                .collect();
            let analytic_a: Vec<f64> = gfull
                .iter()
                .enumerate()
                .filter(|(i, _)| !seg.contains(i))
                .map(|(_, v)| *v)
                .collect();
            let rebuild = |p: &[f64]| -> Vec<f64> {
                let mut whole = Vec::with_capacity(full.len());
                whole.extend_from_slice(&p[..seg.start]);
                whole.extend_from_slice(&full[seg.clone()]);
                whole.extend_from_slice(&p[seg.start..]);
                whole
            };
            let report_a = finite_diff_gradcheck(
                |p| {
                    let mut m = model.clone();
                    set_all(&mut m, &rebuild(p));
                    let (b, _) = local_objective(&m, &data, &[0, 1, 2], Some(&anchor), &settings).unwrap();
                    b.total
                },
                &mut params_a,
                &analytic_a,
                1e-5,
            )
            .unwrap();
            assert!(
                report_a.max_rel_err < 1e-4,
                "case {case}: non-reference gradients off by {} at {}",
                report_a.max_rel_err,
                report_a.worst_index
            );

            // Group B: the reference encoder, against the auxiliary fit.
            let mut params_b: Vec<f64> = full[seg.clone()].to_vec();
            let analytic_b: Vec<f64> = gfull[seg.clone()].to_vec();
            let report_b = finite_diff_gradcheck(
                |p| {
                    let mut whole = full.clone();
                    whole[seg.clone()].copy_from_slice(p);
                    let mut m = model.clone();
                    set_all(&mut m, &whole);
                    let (b, _) = local_objective(&m, &data, &[0, 1, 2], Some(&anchor), &settings).unwrap();
                    b.reference_fit
                },
                &mut params_b,
                &analytic_b,
                1e-5,
            )
            .unwrap();
            assert!(
                report_b.max_rel_err < 1e-4,
                "case {case}: reference-encoder gradients off by {} at {}",
                report_b.max_rel_err,
                report_b.worst_index
            );
        }
    }

    #[test]
    fn sample_mode_noise_is_keyed_to_rows_not_batches() {
        let m = init_model(ClientDims { shared: 3, private: 2 }, &tiny_hyper(OutcomeKind::Continuous), 31).unwrap();
        let data = tiny_dataset(OutcomeKind::Continuous);
        let settings = ObjectiveSettings {
            mode: SampleMode::Sample { seed: 11 },
            lambda_prox: 0.0,
            ..ObjectiveSettings::default()
        };
        // Row 2 alone vs row 2 after others: same per-row noise, so the
        // single-row objective must match exactly.
        let (alone, _) = local_objective(&m, &data, &[2], None, &settings).unwrap();
        let (mixed, _) = local_objective(&m, &data, &[0, 1, 2], None, &settings).unwrap();
        let (row0, _) = local_objective(&m, &data, &[0], None, &settings).unwrap();
        let (row1, _) = local_objective(&m, &data, &[1], None, &settings).unwrap();
        let mean_outcome = (alone.outcome + row0.outcome + row1.outcome) / 3.0;
        assert!((mixed.outcome - mean_outcome).abs() < 1e-12);
    }
}

//! Semi-synthetic multi-domain generator with ground-truth potential
//! outcomes.
//!
//! For a federation of K silos the generator draws three weight banks per
//! surface: per-domain shared weights (applied to every sample's shared
//! block), per-client private weights, and per-client full-vector weights.
//! A sample's structural value blends the K-domain average of the shared
//! projections with the client's private and full projections:
//!
//! ```text
//! s(x) = alpha/K * sum_j <w_shared[j], x_s> / d_s
//!      + (1 - alpha) * ( beta * <w_private[k], x_p> / d_p
//!                      + (1 - beta) * <w_full[k], [x_s | x_p]> / d_full )
//! ```
//!
//! alpha slides the surface between fully shared structure (alpha = 1) and
//! fully client-specific structure (alpha = 0); beta splits the latter
//! between the private block and the full covariate vector. Two independent
//! banks define the untreated surface and the effect surface; Gaussian noise
//! is added to the untreated arm only, and a logistic coin on the effect
//! assigns treatment, confounding the observed arms.

use super::schema::FeatureSchema;
use super::{ClientDataset, DataError};
use crate::kernel::{sigmoid, Matrix};
use crate::rng::{derive_rng, purpose};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Family for weight draws. `Normal` reads (loc, scale) as mean and
/// variance; `Uniform` reads them as the interval [loc, scale].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightDist {
    Normal,
    Uniform,
}

/// Generator settings shared by every client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub samples_per_client: usize,
    /// Weight on the cross-domain shared structure, in [0, 1].
    pub alpha: f64,
    /// Within the client-specific part, weight on the private block vs the
    /// full covariate vector, in [0, 1].
    pub beta: f64,
    /// Variance of the additive noise on the untreated outcome.
    pub noise_var: f64,
    pub weight_loc: f64,
    pub weight_scale: f64,
    pub weight_dist: WeightDist,
    /// Z-score the effect before the logistic treatment coin, keeping
    /// propensities away from 0/1 when effects are large.
    pub standardize_tau: bool,
}

impl Default for SynthConfig {
    fn default() -> SynthConfig {
        SynthConfig {
            seed: 0,
            samples_per_client: 1000,
            alpha: 0.5,
            beta: 0.5,
            noise_var: 0.01,
            weight_loc: -10.0,
            weight_scale: 10.0,
            weight_dist: WeightDist::Normal,
            standardize_tau: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let unit = |name: &str, v: f64| -> Result<(), DataError> {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(DataError::InvalidConfig(format!("{name} must be in [0, 1], got {v}")));
            }
            Ok(())
        };
        unit("alpha", self.alpha)?;
        unit("beta", self.beta)?;
        if self.samples_per_client == 0 {
            return Err(DataError::InvalidConfig("samples_per_client must be at least 1".into()));
        }
        if self.noise_var < 0.0 || !self.noise_var.is_finite() {
            return Err(DataError::InvalidConfig(format!(
                "noise_var must be nonnegative, got {}",
                self.noise_var
            )));
        }
        if !self.weight_loc.is_finite() || !self.weight_scale.is_finite() {
            return Err(DataError::InvalidConfig("weight_loc/weight_scale must be finite".into()));
        }
        match self.weight_dist {
            WeightDist::Normal if self.weight_scale < 0.0 => Err(DataError::InvalidConfig(format!(
                "normal weight_scale is a variance and must be nonnegative, got {}",
                self.weight_scale
            ))),
            WeightDist::Uniform if self.weight_scale < self.weight_loc => {
                Err(DataError::InvalidConfig(format!(
                    "uniform weight interval is [weight_loc, weight_scale], got [{}, {}]",
                    self.weight_loc, self.weight_scale
                )))
            }
            _ => Ok(()),
        }
    }
}

/// One surface's weights: per-domain shared vectors plus per-client private
/// and full vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightBank {
    /// K vectors of width d_shared; vector j belongs to domain j.
    pub shared: Vec<Vec<f64>>,
    /// Per-client vectors of width d_private[k].
    pub private: Vec<Vec<f64>>,
    /// Per-client vectors of width d_shared + d_private[k].
    pub full: Vec<Vec<f64>>,
}

fn draw(rng: &mut ChaCha8Rng, config: &SynthConfig, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| match config.weight_dist {
            WeightDist::Normal => {
                let z: f64 = StandardNormal.sample(rng);
                config.weight_loc + config.weight_scale.sqrt() * z
            }
            WeightDist::Uniform => {
                let u: f64 = rng.gen();
                config.weight_loc + (config.weight_scale - config.weight_loc) * u
            }
        })
        .collect()
}

fn draw_bank(schema: &FeatureSchema, config: &SynthConfig, tag: u64) -> WeightBank {
    let mut rng = derive_rng(config.seed, &[tag]);
    let k = schema.clients();
    WeightBank {
        shared: (0..k).map(|_| draw(&mut rng, config, schema.shared_dim)).collect(),
        private: (0..k).map(|j| draw(&mut rng, config, schema.private_dims[j])).collect(),
        full: (0..k).map(|j| draw(&mut rng, config, schema.full_dim(j))).collect(),
    }
}

/// Draw the untreated-surface and effect-surface banks. The two banks come
/// from independent streams of the same seed, so the effect surface is not a
/// rescaling of the outcome surface.
pub fn generate_weights(
    schema: &FeatureSchema,
    config: &SynthConfig,
) -> Result<(WeightBank, WeightBank), DataError> {
    config.validate()?;
    Ok((
        draw_bank(schema, config, purpose::WEIGHTS_Y0),
        draw_bank(schema, config, purpose::WEIGHTS_TAU),
    ))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Evaluate the structural surface for client `k` at one sample.
pub fn eval_structural(
    bank: &WeightBank,
    k: usize,
    x_shared: &[f64],
    x_private: &[f64],
    alpha: f64,
    beta: f64,
) -> Result<f64, DataError> {
    let clients = bank.shared.len();
    if k >= clients {
        return Err(DataError::InvalidConfig(format!(
            "client index {k} out of range for a {clients}-client bank"
        )));
    }
    let d_s = bank.shared[0].len();
    let d_p = bank.private[k].len();
    if x_shared.len() != d_s || x_private.len() != d_p {
        return Err(DataError::Inconsistent(format!(
            "sample blocks ({}, {}) do not match bank widths ({d_s}, {d_p})",
            x_shared.len(),
            x_private.len()
        )));
    }

    // Every domain's shared weights act on this sample's own shared block.
    let mut shared_term = 0.0;
    for w in &bank.shared {
        shared_term += dot(w, x_shared) / d_s as f64;
    }
    shared_term *= alpha / clients as f64;

    let private_term = dot(&bank.private[k], x_private) / d_p as f64;
    let full_w = &bank.full[k];
    let full_term = (dot(&full_w[..d_s], x_shared) + dot(&full_w[d_s..], x_private)) / (d_s + d_p) as f64;

    Ok(shared_term + (1.0 - alpha) * (beta * private_term + (1.0 - beta) * full_term))
}

/// Generate every client's covariates and ground-truth potential outcomes.
/// Covariates are i.i.d. standard normal; the untreated outcome is the
/// structural surface plus N(0, noise_var) noise; the treated outcome adds
/// the noiseless effect surface on top. Treatments are not assigned yet.
pub fn generate_potential_outcomes(
    schema: &FeatureSchema,
    config: &SynthConfig,
) -> Result<Vec<ClientDataset>, DataError> {
    config.validate()?;
    let (bank_y0, bank_tau) = generate_weights(schema, config)?;
    (0..schema.clients())
        .into_par_iter()
        .map(|k| {
            let n = config.samples_per_client;
            let d_s = schema.shared_dim;
            let d_p = schema.private_dims[k];
            let width = d_s + d_p;

            let mut cov_rng = derive_rng(config.seed, &[purpose::COVARIATES, k as u64]);
            let mut data = vec![0.0; n * width];
            for v in data.iter_mut() {
                *v = StandardNormal.sample(&mut cov_rng);
            }
            let covariates = Matrix::from_flat(n, width, data).expect("covariate shape");

            let mut noise_rng = derive_rng(config.seed, &[purpose::NOISE, k as u64]);
            let noise_sd = config.noise_var.sqrt();
            let mut y0 = Vec::with_capacity(n);
            let mut y1 = Vec::with_capacity(n);
            for i in 0..n {
                let xs = &covariates.row(i)[..d_s];
                let xp = &covariates.row(i)[d_s..];
                let eps: f64 = noise_sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut noise_rng);
                let base = eval_structural(&bank_y0, k, xs, xp, config.alpha, config.beta)? + eps;
                let tau = eval_structural(&bank_tau, k, xs, xp, config.alpha, config.beta)?;
                y0.push(base);
                y1.push(base + tau);
            }

            Ok(ClientDataset {
                client_id: k,
                shared_dim: d_s,
                private_dim: d_p,
                covariates,
                treatment: None,
                observed: None,
                true_y0: Some(y0),
                true_y1: Some(y1),
            })
        })
        .collect()
}

/// Assign treatments: propensity sigmoid(y1 - y0) per row (optionally
/// z-scored per client first), a Bernoulli draw per row, and the observed
/// outcome copied bit-for-bit from the selected potential outcome.
pub fn assign_treatments(datasets: &mut [ClientDataset], config: &SynthConfig) -> Result<(), DataError> {
    for ds in datasets.iter_mut() {
        let (y0, y1) = match (&ds.true_y0, &ds.true_y1) {
            (Some(y0), Some(y1)) => (y0, y1),
            _ => {
                return Err(DataError::Inconsistent(format!(
                    "client {}: treatment assignment needs ground-truth potential outcomes",
                    ds.client_id
                )))
            }
        };
        let n = ds.n();
        let mut tau: Vec<f64> = y1.iter().zip(y0).map(|(a, b)| a - b).collect();
        if config.standardize_tau {
            let mean = tau.iter().sum::<f64>() / n as f64;
            let var = tau.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            for t in tau.iter_mut() {
                *t = if sd > 1e-12 { (*t - mean) / sd } else { 0.0 };
            }
        }
        let mut rng = derive_rng(config.seed, &[purpose::TREATMENT, ds.client_id as u64]);
        let mut w = Vec::with_capacity(n);
        let mut observed = Vec::with_capacity(n);
        for i in 0..n {
            let p = sigmoid(tau[i]);
            let treated = rng.gen::<f64>() < p;
            w.push(treated as u8);
            observed.push(if treated { y1[i] } else { y0[i] });
        }
        ds.treatment = Some(w);
        ds.observed = Some(observed);
    }
    Ok(())
}

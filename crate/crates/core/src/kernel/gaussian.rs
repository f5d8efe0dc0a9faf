//! Diagonal Gaussians parameterized by (mean, log variance) and their KL
//! divergence. These are the encoder posteriors; log-variance storage keeps
//! every parameterization unconstrained.

use super::KernelError;
use serde::{Deserialize, Serialize};

/// Diagonal Gaussian with per-dimension mean and log variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<DiagGaussian, KernelError> {
        if mean.len() != log_var.len() {
            return Err(KernelError::shape(
                "DiagGaussian::new",
                format!("log_var of length {}", mean.len()),
                format!("{}", log_var.len()),
            ));
        }
        if mean.iter().chain(log_var.iter()).any(|v| !v.is_finite()) {
            return Err(KernelError::value("DiagGaussian::new", "non-finite entry"));
        }
        Ok(DiagGaussian { mean, log_var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Standard normal of the given dimension.
    pub fn standard(dim: usize) -> DiagGaussian {
        DiagGaussian {
            mean: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    /// Reparameterized draw: mean + exp(log_var / 2) * eps.
    pub fn sample_with(&self, eps: &[f64]) -> Result<Vec<f64>, KernelError> {
        if eps.len() != self.dim() {
            return Err(KernelError::shape(
                "DiagGaussian::sample_with",
                format!("eps of length {}", self.dim()),
                format!("{}", eps.len()),
            ));
        }
        Ok(self
            .mean
            .iter()
            .zip(self.log_var.iter().zip(eps))
            .map(|(&m, (&lv, &e))| m + (lv / 2.0).exp() * e)
            .collect())
    }
}

/// KL(q || p) between diagonal Gaussians, summed over dimensions:
/// 0.5 * sum[ log(v_p / v_q) + (v_q + (m_q - m_p)^2) / v_p - 1 ].
pub fn kl_diag_gaussian(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64, KernelError> {
    if q.dim() != p.dim() {
        return Err(KernelError::shape(
            "kl_diag_gaussian",
            format!("distributions of equal dim, q has {}", q.dim()),
            format!("p has {}", p.dim()),
        ));
    }
    let mut kl = 0.0;
    for i in 0..q.dim() {
        let (mq, lvq) = (q.mean[i], q.log_var[i]);
        let (mp, lvp) = (p.mean[i], p.log_var[i]);
        let d = mq - mp;
        kl += 0.5 * ((lvp - lvq) + (lvq.exp() + d * d) * (-lvp).exp() - 1.0);
    }
    Ok(kl)
}

/// Gradient of KL(q || p) with respect to q's parameters.
#[derive(Debug, Clone)]
pub struct KlGrad {
    pub d_mean: Vec<f64>,
    pub d_log_var: Vec<f64>,
}

/// KL(q || p) together with its gradient in q, treating p as a constant —
/// the form needed when p is a gradient-stopped reference posterior.
pub fn kl_grad_wrt_q(q: &DiagGaussian, p: &DiagGaussian) -> Result<(f64, KlGrad), KernelError> {
    let kl = kl_diag_gaussian(q, p)?;
    let dim = q.dim();
    let mut d_mean = vec![0.0; dim];
    let mut d_log_var = vec![0.0; dim];
    for i in 0..dim {
        let inv_vp = (-p.log_var[i]).exp();
        d_mean[i] = (q.mean[i] - p.mean[i]) * inv_vp;
        d_log_var[i] = 0.5 * ((q.log_var[i] - p.log_var[i]).exp() - 1.0);
    }
    Ok((kl, KlGrad { d_mean, d_log_var }))
}

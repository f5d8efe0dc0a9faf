use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Estimated per-sample effects next to the generator's ground truth.
/// `tau_true` is only available on synthetic data; the error metrics refuse
/// to run without it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimates {
    pub tau_hat: Vec<f64>,
    pub tau_true: Option<Vec<f64>>,
}

impl EffectEstimates {
    pub fn new(tau_hat: Vec<f64>, tau_true: Option<Vec<f64>>) -> Result<EffectEstimates, MetricsError> {
        if let Some(t) = &tau_true {
            if t.len() != tau_hat.len() {
                return Err(MetricsError::Length {
                    context: "tau_true".into(),
                    expected: tau_hat.len(),
                    got: t.len(),
                });
            }
        }
        Ok(EffectEstimates { tau_hat, tau_true })
    }

    fn paired(&self, metric: &str) -> Result<(&[f64], &[f64]), MetricsError> {
        let truth = self
            .tau_true
            .as_deref()
            .ok_or_else(|| MetricsError::MissingGroundTruth(format!("{metric} needs tau_true")))?;
        if self.tau_hat.is_empty() {
            return Err(MetricsError::Empty(format!("{metric} over zero samples")));
        }
        if truth.len() != self.tau_hat.len() {
            return Err(MetricsError::Length {
                context: format!("{metric} tau_true"),
                expected: self.tau_hat.len(),
                got: truth.len(),
            });
        }
        Ok((&self.tau_hat, truth))
    }
}

/// Root-mean-squared error of the per-sample effect estimates:
/// `sqrt(mean((tau_hat - tau_true)^2))`.
pub fn pehe(estimates: &EffectEstimates) -> Result<f64, MetricsError> {
    let (hat, truth) = estimates.paired("pehe")?;
    let n = hat.len() as f64;
    let sum: f64 = hat.iter().zip(truth).map(|(h, t)| (h - t) * (h - t)).sum();
    Ok((sum / n).sqrt())
}

/// Absolute error of the average effect: `|mean(tau_hat) - mean(tau_true)|`.
/// Never exceeds [`pehe`] on the same estimates.
pub fn ate_error(estimates: &EffectEstimates) -> Result<f64, MetricsError> {
    let (hat, truth) = estimates.paired("ate_error")?;
    let n = hat.len() as f64;
    let mh: f64 = hat.iter().sum::<f64>() / n;
    let mt: f64 = truth.iter().sum::<f64>() / n;
    Ok((mh - mt).abs())
}

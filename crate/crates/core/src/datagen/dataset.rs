//! Per-client dataset container and the deterministic train/test split.

use super::DataError;
use crate::kernel::Matrix;
use crate::rng::{derive_rng, purpose};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// One silo's local data. Covariate rows are laid out `[shared | private]`.
/// Ground-truth potential outcomes are present for synthetic data and absent
/// for real tables; treatment and the observed outcome are filled in by
/// treatment assignment (synthetic) or read from the table (real).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub client_id: usize,
    pub shared_dim: usize,
    pub private_dim: usize,
    /// n x (shared_dim + private_dim), row-major.
    pub covariates: Matrix,
    /// 0/1 treatment indicator per row, once assigned.
    pub treatment: Option<Vec<u8>>,
    /// Observed (factual) outcome per row, once assigned.
    pub observed: Option<Vec<f64>>,
    /// Ground-truth untreated outcome, synthetic data only.
    pub true_y0: Option<Vec<f64>>,
    /// Ground-truth treated outcome, synthetic data only.
    pub true_y1: Option<Vec<f64>>,
}

impl ClientDataset {
    pub fn n(&self) -> usize {
        self.covariates.rows()
    }

    /// Shared block of row `i`.
    pub fn x_shared(&self, i: usize) -> &[f64] {
        &self.covariates.row(i)[..self.shared_dim]
    }

    /// Private block of row `i`.
    pub fn x_private(&self, i: usize) -> &[f64] {
        &self.covariates.row(i)[self.shared_dim..]
    }

    /// True per-row treatment effect y1 - y0, when ground truth is present.
    pub fn true_tau(&self) -> Option<Vec<f64>> {
        match (&self.true_y0, &self.true_y1) {
            (Some(y0), Some(y1)) => Some(y1.iter().zip(y0).map(|(a, b)| a - b).collect()),
            _ => None,
        }
    }

    /// Check that every parallel vector matches the covariate row count.
    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.n();
        if self.covariates.cols() != self.shared_dim + self.private_dim {
            return Err(DataError::Inconsistent(format!(
                "client {}: covariate width {} != shared {} + private {}",
                self.client_id,
                self.covariates.cols(),
                self.shared_dim,
                self.private_dim
            )));
        }
        let check = |name: &str, len: Option<usize>| -> Result<(), DataError> {
            match len {
                Some(l) if l != n => Err(DataError::Inconsistent(format!(
                    "client {}: {name} has {l} rows, covariates have {n}",
                    self.client_id
                ))),
                _ => Ok(()),
            }
        };
        check("treatment", self.treatment.as_ref().map(Vec::len))?;
        check("observed", self.observed.as_ref().map(Vec::len))?;
        check("true_y0", self.true_y0.as_ref().map(Vec::len))?;
        check("true_y1", self.true_y1.as_ref().map(Vec::len))?;
        if let Some(t) = &self.treatment {
            if t.iter().any(|&w| w > 1) {
                return Err(DataError::Inconsistent(format!(
                    "client {}: treatment entries must be 0 or 1",
                    self.client_id
                )));
            }
        }
        Ok(())
    }

    /// New dataset containing the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> ClientDataset {
        let width = self.covariates.cols();
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            data.extend_from_slice(self.covariates.row(i));
        }
        let pick_f = |v: &Option<Vec<f64>>| v.as_ref().map(|v| indices.iter().map(|&i| v[i]).collect());
        let pick_u = |v: &Option<Vec<u8>>| v.as_ref().map(|v: &Vec<u8>| indices.iter().map(|&i| v[i]).collect());
        ClientDataset {
            client_id: self.client_id,
            shared_dim: self.shared_dim,
            private_dim: self.private_dim,
            covariates: Matrix::from_flat(indices.len(), width, data).expect("subset shape"),
            treatment: pick_u(&self.treatment),
            observed: pick_f(&self.observed),
            true_y0: pick_f(&self.true_y0),
            true_y1: pick_f(&self.true_y1),
        }
    }
}

/// Deterministic row split into (train, test). The test side gets
/// floor(n * test_fraction) rows, but at least one; errors when fewer than
/// two rows are available. Row order within each side is ascending, so the
/// split is stable under re-runs with the same seed.
pub fn train_test_split(
    dataset: &ClientDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(ClientDataset, ClientDataset), DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::InvalidConfig(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let n = dataset.n();
    if n < 2 {
        return Err(DataError::TooSmall(format!(
            "client {}: {n} rows cannot give nonempty train and test splits",
            dataset.client_id
        )));
    }
    let test_n = (((n as f64) * test_fraction).floor() as usize).max(1);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = derive_rng(seed, &[purpose::SPLIT, dataset.client_id as u64]);
    indices.shuffle(&mut rng);
    let mut test_idx = indices[..test_n].to_vec();
    let mut train_idx = indices[test_n..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((dataset.subset(&train_idx), dataset.subset(&test_idx)))
}

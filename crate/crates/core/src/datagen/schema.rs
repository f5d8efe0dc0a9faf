//! Feature-space layout across a federation: one shared covariate block of
//! equal width everywhere, plus a private block whose width may differ per
//! client.

use super::DataError;
use crate::rng::{derive_rng, purpose};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// Widths of the shared and private covariate blocks for every client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    /// Width of the shared block, identical across clients.
    pub shared_dim: usize,
    /// Private-block width per client; length is the number of clients.
    pub private_dims: Vec<usize>,
    /// For schemas carved out of an existing table: which source columns the
    /// blocks map to. `None` for purely synthetic schemas.
    pub assignment: Option<ColumnAssignment>,
}

/// Mapping from schema blocks to source-table column indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnAssignment {
    /// Source columns forming the shared block (same for every client).
    pub shared: Vec<usize>,
    /// Source columns forming each client's private block; disjoint from the
    /// shared block and from each other.
    pub private: Vec<Vec<usize>>,
}

impl FeatureSchema {
    /// Schema for synthetic generation: widths only, no source columns.
    pub fn synthetic(shared_dim: usize, private_dims: Vec<usize>) -> Result<FeatureSchema, DataError> {
        if shared_dim == 0 {
            return Err(DataError::InvalidConfig("shared_dim must be at least 1".into()));
        }
        if private_dims.is_empty() {
            return Err(DataError::InvalidConfig("need at least one client".into()));
        }
        if private_dims.contains(&0) {
            return Err(DataError::InvalidConfig("private block widths must be at least 1".into()));
        }
        Ok(FeatureSchema {
            shared_dim,
            private_dims,
            assignment: None,
        })
    }

    pub fn clients(&self) -> usize {
        self.private_dims.len()
    }

    /// Full covariate width d_shared + d_private for client `k`.
    pub fn full_dim(&self, k: usize) -> usize {
        self.shared_dim + self.private_dims[k]
    }
}

/// Randomly partition `total_columns` source columns into one shared block
/// and disjoint per-client private blocks. Deterministic in `seed`.
pub fn build_feature_schema(
    total_columns: usize,
    shared_dim: usize,
    private_dims: &[usize],
    seed: u64,
) -> Result<FeatureSchema, DataError> {
    let mut schema = FeatureSchema::synthetic(shared_dim, private_dims.to_vec())?;
    let needed: usize = shared_dim + private_dims.iter().sum::<usize>();
    if needed > total_columns {
        return Err(DataError::InvalidConfig(format!(
            "schema needs {needed} columns but the table has {total_columns}"
        )));
    }
    let mut columns: Vec<usize> = (0..total_columns).collect();
    let mut rng = derive_rng(seed, &[purpose::SCHEMA]);
    columns.shuffle(&mut rng);
    let mut cursor = columns.into_iter();
    let shared: Vec<usize> = cursor.by_ref().take(shared_dim).collect();
    let private: Vec<Vec<usize>> = private_dims
        .iter()
        .map(|&d| cursor.by_ref().take(d).collect())
        .collect();
    schema.assignment = Some(ColumnAssignment { shared, private });
    Ok(schema)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widths_and_full_dim_arithmetic() {
        let s = FeatureSchema::synthetic(4, vec![2, 5]).unwrap();
        assert_eq!(s.clients(), 2);
        assert_eq!(s.full_dim(0), 6);
        assert_eq!(s.full_dim(1), 9);
    }

    #[test]
    fn zero_width_blocks_rejected() {
        assert!(FeatureSchema::synthetic(0, vec![2]).is_err());
        assert!(FeatureSchema::synthetic(3, vec![2, 0]).is_err());
        assert!(FeatureSchema::synthetic(3, vec![]).is_err());
    }

    #[test]
    fn partition_is_disjoint_and_deterministic() {
        let a = build_feature_schema(20, 4, &[3, 5, 2], 9).unwrap();
        let b = build_feature_schema(20, 4, &[3, 5, 2], 9).unwrap();
        assert_eq!(a, b);
        let asg = a.assignment.unwrap();
        let mut seen = asg.shared.clone();
        for block in &asg.private {
            seen.extend(block);
        }
        let total = seen.len();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), total, "blocks overlap");
        assert_eq!(total, 4 + 3 + 5 + 2);
        assert!(seen.iter().all(|&c| c < 20));
    }

    #[test]
    fn different_seeds_differ() {
        let a = build_feature_schema(30, 5, &[5, 5], 1).unwrap();
        let b = build_feature_schema(30, 5, &[5, 5], 2).unwrap();
        assert_ne!(a.assignment, b.assignment);
    }

    #[test]
    fn insufficient_columns_rejected() {
        assert!(build_feature_schema(5, 4, &[3], 0).is_err());
    }
}

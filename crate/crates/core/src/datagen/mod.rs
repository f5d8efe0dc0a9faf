//! Data layer: semi-synthetic multi-domain generation with ground-truth
//! potential outcomes, column partitioning for real tabular data, CSV
//! import/export, and per-client train/test splits.
//!
//! The synthetic generator draws, per domain, three weight banks (shared,
//! private, full) and composes a structural outcome surface whose shared
//! component is common to every silo while the private and full components
//! are silo-specific. Two independent banks give the untreated surface and
//! the treatment-effect surface; treatment assignment is a logistic coin on
//! the effect, so treated and control arms are confounded by design.

mod dataset;
mod schema;
mod synthetic;
mod tabular;

pub use dataset::{train_test_split, ClientDataset};
pub use schema::{build_feature_schema, ColumnAssignment, FeatureSchema};
pub use synthetic::{
    assign_treatments, eval_structural, generate_potential_outcomes, generate_weights, SynthConfig,
    WeightBank, WeightDist,
};
pub use tabular::{export_clients_csv, export_columns, load_tabular_csv, read_sidecar, CsvColumns, DatasetSidecar};

use thiserror::Error;

/// Errors raised by the data layer.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset inconsistency: {0}")]
    Inconsistent(String),
    #[error("dataset too small: {0}")]
    TooSmall(String),
    #[error("missing column {column:?} in {path}")]
    MissingColumn { column: String, path: String },
    #[error("bad cell at row {row}, column {column:?} in {path}: {detail}")]
    BadCell {
        row: usize,
        column: String,
        path: String,
        detail: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

//! CSV import/export and the JSON sidecar that makes an exported federation
//! self-describing.
//!
//! Exported files use shortest-roundtrip float formatting, so a load of an
//! export reproduces the original values bit-for-bit.

use super::schema::FeatureSchema;
use super::synthetic::SynthConfig;
use super::{ClientDataset, DataError};
use crate::kernel::Matrix;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

/// Column roles for loading one client's table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvColumns {
    pub shared: Vec<String>,
    pub private: Vec<String>,
    pub treatment: String,
    pub outcome: String,
}

/// Sidecar written next to exported client CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub config: SynthConfig,
    pub schema: FeatureSchema,
    /// One file name per client, index-aligned with the schema.
    pub files: Vec<String>,
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Load one client's rows from a headed CSV. `columns` names the covariate
/// blocks plus the treatment and outcome columns; every cell must parse as
/// f64 and treatment cells must be exactly 0 or 1. Ground-truth potential
/// outcomes are not expected in real tables and stay `None`.
pub fn load_tabular_csv(path: &Path, client_id: usize, columns: &CsvColumns) -> Result<ClientDataset, DataError> {
    if columns.shared.is_empty() || columns.private.is_empty() {
        return Err(DataError::InvalidConfig(
            "need at least one shared and one private column".into(),
        ));
    }
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| DataError::Csv {
            path: display.clone(),
            source: e,
        })?
        .clone();

    let find = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn {
                column: name.to_string(),
                path: display.clone(),
            })
    };
    let shared_idx: Vec<usize> = columns.shared.iter().map(|c| find(c)).collect::<Result<_, _>>()?;
    let private_idx: Vec<usize> = columns.private.iter().map(|c| find(c)).collect::<Result<_, _>>()?;
    let w_idx = find(&columns.treatment)?;
    let y_idx = find(&columns.outcome)?;

    let mut data = Vec::new();
    let mut treatment = Vec::new();
    let mut observed = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Csv {
            path: display.clone(),
            source: e,
        })?;
        let cell = |idx: usize, column: &str| -> Result<f64, DataError> {
            let raw = record.get(idx).unwrap_or("");
            raw.trim().parse::<f64>().map_err(|_| DataError::BadCell {
                row: row_no + 1,
                column: column.to_string(),
                path: display.clone(),
                detail: format!("{raw:?} is not a number"),
            })
        };
        for (idx, name) in shared_idx.iter().zip(&columns.shared) {
            data.push(cell(*idx, name)?);
        }
        for (idx, name) in private_idx.iter().zip(&columns.private) {
            data.push(cell(*idx, name)?);
        }
        let w = cell(w_idx, &columns.treatment)?;
        if w != 0.0 && w != 1.0 {
            return Err(DataError::BadCell {
                row: row_no + 1,
                column: columns.treatment.clone(),
                path: display.clone(),
                detail: format!("treatment must be 0 or 1, got {w}"),
            });
        }
        treatment.push(w as u8);
        observed.push(cell(y_idx, &columns.outcome)?);
    }

    let n = treatment.len();
    let width = shared_idx.len() + private_idx.len();
    let ds = ClientDataset {
        client_id,
        shared_dim: shared_idx.len(),
        private_dim: private_idx.len(),
        covariates: Matrix::from_flat(n, width, data)
            .map_err(|e| DataError::Inconsistent(format!("{display}: {e}")))?,
        treatment: Some(treatment),
        observed: Some(observed),
        true_y0: None,
        true_y1: None,
    };
    ds.validate()?;
    Ok(ds)
}

/// Default column names used by the exporter: `x_s_<i>`, `x_p_<i>`, `w`, `y`.
pub fn export_columns(shared_dim: usize, private_dim: usize) -> CsvColumns {
    CsvColumns {
        shared: (0..shared_dim).map(|i| format!("x_s_{i}")).collect(),
        private: (0..private_dim).map(|i| format!("x_p_{i}")).collect(),
        treatment: "w".to_string(),
        outcome: "y".to_string(),
    }
}

/// Write one CSV per client (columns `x_s_*`, `x_p_*`, `w`, `y`, `y0`, `y1`)
/// plus a `dataset.json` sidecar recording the generator config and schema.
/// Returns the sidecar.
pub fn export_clients_csv(
    datasets: &[ClientDataset],
    config: &SynthConfig,
    schema: &FeatureSchema,
    dir: &Path,
) -> Result<DatasetSidecar, DataError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut files = Vec::with_capacity(datasets.len());
    for ds in datasets {
        ds.validate()?;
        let (treatment, observed) = match (&ds.treatment, &ds.observed) {
            (Some(t), Some(o)) => (t, o),
            _ => {
                return Err(DataError::Inconsistent(format!(
                    "client {}: export needs assigned treatments and observed outcomes",
                    ds.client_id
                )))
            }
        };
        let (y0, y1) = match (&ds.true_y0, &ds.true_y1) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(DataError::Inconsistent(format!(
                    "client {}: export needs ground-truth potential outcomes",
                    ds.client_id
                )))
            }
        };
        let name = format!("client_{}.csv", ds.client_id);
        let path = dir.join(&name);
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut out = BufWriter::new(file);

        let cols = export_columns(ds.shared_dim, ds.private_dim);
        let mut header: Vec<String> = cols.shared.clone();
        header.extend(cols.private.iter().cloned());
        header.extend(["w", "y", "y0", "y1"].map(String::from));
        writeln!(out, "{}", header.join(",")).map_err(|e| io_err(&path, e))?;

        for i in 0..ds.n() {
            let mut fields: Vec<String> = ds.covariates.row(i).iter().map(|v| format!("{v}")).collect();
            fields.push(format!("{}", treatment[i]));
            fields.push(format!("{}", observed[i]));
            fields.push(format!("{}", y0[i]));
            fields.push(format!("{}", y1[i]));
            writeln!(out, "{}", fields.join(",")).map_err(|e| io_err(&path, e))?;
        }
        out.flush().map_err(|e| io_err(&path, e))?;
        files.push(name);
    }

    let sidecar = DatasetSidecar {
        config: config.clone(),
        schema: schema.clone(),
        files,
    };
    let sidecar_path = dir.join("dataset.json");
    let file = File::create(&sidecar_path).map_err(|e| io_err(&sidecar_path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &sidecar).map_err(|e| DataError::Json {
        path: sidecar_path.display().to_string(),
        source: e,
    })?;
    Ok(sidecar)
}

/// Read back an exported sidecar.
pub fn read_sidecar(path: &Path) -> Result<DatasetSidecar, DataError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| DataError::Json {
        path: path.display().to_string(),
        source: e,
    })
}

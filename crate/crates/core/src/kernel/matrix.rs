//! Minimal row-major f64 matrix. Just enough linear algebra for small MLPs;
//! no BLAS, no views — the dominant consumer is a handful of layers a few
//! dozen units wide.

use super::KernelError;
use serde::{Deserialize, Serialize};

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from a flat row-major buffer. Errors if the length is off.
    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix, KernelError> {
        if data.len() != rows * cols {
            return Err(KernelError::shape(
                "Matrix::from_flat",
                format!("{} entries for {rows}x{cols}", rows * cols),
                format!("{}", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Build from nested rows. Errors if rows are ragged.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Matrix, KernelError> {
        let r = rows.len();
        let c = rows.first().map(|row| row.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(KernelError::shape(
                    "Matrix::from_rows",
                    format!("row {i} of width {c}"),
                    format!("{}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    /// Outer product g ⊗ x, the shape of a weight gradient.
    pub fn outer(g: &[f64], x: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(g.len(), x.len());
        for (i, &gi) in g.iter().enumerate() {
            let row = &mut m.data[i * x.len()..(i + 1) * x.len()];
            for (j, &xj) in x.iter().enumerate() {
                row[j] = gi * xj;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Borrow row `r` as a slice.
    pub fn row(&self, r: usize) -> &[f64] {
        debug_assert!(r < self.rows);
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// y = W x.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, KernelError> {
        if x.len() != self.cols {
            return Err(KernelError::shape(
                "Matrix::matvec",
                format!("input of length {}", self.cols),
                format!("{}", x.len()),
            ));
        }
        let mut y = vec![0.0; self.rows];
        for (i, yi) in y.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut acc = 0.0;
            for (w, xv) in row.iter().zip(x) {
                acc += w * xv;
            }
            *yi = acc;
        }
        Ok(y)
    }

    /// y = Wᵀ g — propagates an output gradient back to the input side.
    pub fn matvec_t(&self, g: &[f64]) -> Result<Vec<f64>, KernelError> {
        if g.len() != self.rows {
            return Err(KernelError::shape(
                "Matrix::matvec_t",
                format!("input of length {}", self.rows),
                format!("{}", g.len()),
            ));
        }
        let mut y = vec![0.0; self.cols];
        for (i, &gi) in g.iter().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (yj, w) in y.iter_mut().zip(row) {
                *yj += w * gi;
            }
        }
        Ok(y)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

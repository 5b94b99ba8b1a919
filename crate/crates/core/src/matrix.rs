//! Dense real matrix with validated (finite) entries.
//!
//! Candidate and recovered matrices throughout the crate are plain dense
//! `f64` matrices. The wrapper guarantees every entry is finite, so the
//! numerical modules never have to re-check for NaN/Inf.

use nalgebra::DMatrix;

use crate::error::{QmcError, Result};

/// Dense m×n real matrix, all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    inner: DMatrix<f64>,
}

impl DenseMatrix {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            inner: DMatrix::zeros(rows, cols),
        }
    }

    /// Build from a row-major slice of entries.
    pub fn from_row_major(rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(QmcError::DimensionMismatch(format!(
                "expected {}x{}={} entries, got {}",
                rows,
                cols,
                rows * cols,
                entries.len()
            )));
        }
        let inner = DMatrix::from_row_slice(rows, cols, entries);
        Self::from_inner(inner)
    }

    /// Build from a function of (row, col).
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        Self::from_inner(DMatrix::from_fn(rows, cols, f))
    }

    /// Wrap an existing matrix, validating that every entry is finite.
    pub fn from_inner(inner: DMatrix<f64>) -> Result<Self> {
        if inner.iter().any(|v| !v.is_finite()) {
            return Err(QmcError::Numerical(
                "matrix contains non-finite entries".into(),
            ));
        }
        Ok(Self { inner })
    }

    pub fn rows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn cols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.inner[(row, col)]
    }

    /// Set one entry; rejects non-finite values.
    pub fn set(&mut self, row: usize, col: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(QmcError::Domain(format!(
                "non-finite value {value} at ({row}, {col})"
            )));
        }
        self.inner[(row, col)] = value;
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner.norm()
    }

    /// Entries in row-major order.
    pub fn row_major_entries(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows() * self.cols());
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                out.push(self.inner[(i, j)]);
            }
        }
        out
    }

    /// Smallest and largest entry; `None` for an empty matrix.
    pub fn entry_range(&self) -> Option<(f64, f64)> {
        if self.inner.is_empty() {
            return None;
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in self.inner.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Some((lo, hi))
    }

    /// Borrow the underlying matrix.
    pub fn as_inner(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.inner
    }

    /// Relative Frobenius change ‖self − other‖_F / max(‖other‖_F, 1),
    /// the convergence metric used by the solver loops.
    pub fn relative_change_from(&self, other: &DenseMatrix) -> Result<f64> {
        if self.rows() != other.rows() || self.cols() != other.cols() {
            return Err(QmcError::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows(),
                self.cols(),
                other.rows(),
                other.cols()
            )));
        }
        let diff = &self.inner - &other.inner;
        Ok(diff.norm() / other.inner.norm().max(1.0))
    }
}

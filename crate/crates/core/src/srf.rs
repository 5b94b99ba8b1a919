//! Gaussian smoothed rank function and its SVD-based gradient.
//!
//! With `f(σ) = exp(-σ²/2δ²)` and `n = min(rows, cols)`, the smoothed rank
//! of `X` is `n - Σᵢ f(σᵢ(X))`. As δ → 0 each term approaches the indicator
//! of σᵢ > 0 and the value converges to rank(X); as δ → ∞ it approaches
//! `‖X‖_F²/(2δ²)`, which is strictly convex. The continuation solver
//! exploits both limits.

use nalgebra::{DMatrix, DVector};

use crate::error::{QmcError, Result};
use crate::matrix::DenseMatrix;

/// Smoothing width δ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrfParams {
    delta: f64,
}

impl SrfParams {
    pub fn new(delta: f64) -> Result<Self> {
        if !delta.is_finite() || delta <= 0.0 {
            return Err(QmcError::Domain(format!(
                "smoothing width must be positive, got {delta}"
            )));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Thin SVD `X = U diag(σ) Vᵀ` with σ sorted nonincreasing.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// m×k, orthonormal columns (k = min(m, n)).
    pub left_vectors: DMatrix<f64>,
    /// Length k, nonincreasing, nonnegative.
    pub singular_values: DVector<f64>,
    /// n×k, orthonormal columns (V, not Vᵀ).
    pub right_vectors: DMatrix<f64>,
}

impl SvdResult {
    /// `U diag(σ) Vᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let k = self.singular_values.len();
        let mut scaled = self.left_vectors.clone();
        for i in 0..k {
            scaled.column_mut(i).scale_mut(self.singular_values[i]);
        }
        &scaled * self.right_vectors.transpose()
    }
}

/// Thin SVD with singular values sorted in nonincreasing order.
pub fn thin_svd(x: &DenseMatrix) -> Result<SvdResult> {
    let k = x.rows().min(x.cols());
    if k == 0 {
        return Ok(SvdResult {
            left_vectors: DMatrix::zeros(x.rows(), 0),
            singular_values: DVector::zeros(0),
            right_vectors: DMatrix::zeros(x.cols(), 0),
        });
    }
    let svd = x
        .as_inner()
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| {
            QmcError::Numerical(format!(
                "SVD failed to converge on {}x{} matrix",
                x.rows(),
                x.cols()
            ))
        })?;
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let sigma = svd.singular_values;

    // sort descending; stable order for equal values keeps results
    // deterministic
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).expect("finite"));

    let left_vectors = DMatrix::from_fn(x.rows(), k, |i, j| u[(i, order[j])]);
    let right_vectors = DMatrix::from_fn(x.cols(), k, |i, j| v_t[(order[j], i)]);
    let singular_values = DVector::from_fn(k, |i, _| sigma[order[i]]);

    Ok(SvdResult {
        left_vectors,
        singular_values,
        right_vectors,
    })
}

/// Singular values of `x`, sorted nonincreasing.
pub fn singular_values(x: &DenseMatrix) -> Result<DVector<f64>> {
    let k = x.rows().min(x.cols());
    if k == 0 {
        return Ok(DVector::zeros(0));
    }
    let svd = x
        .as_inner()
        .clone()
        .try_svd(false, false, f64::EPSILON, 0)
        .ok_or_else(|| {
            QmcError::Numerical(format!(
                "SVD failed to converge on {}x{} matrix",
                x.rows(),
                x.cols()
            ))
        })?;
    let mut vals: Vec<f64> = svd.singular_values.iter().copied().collect();
    vals.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    Ok(DVector::from_vec(vals))
}

/// Largest singular value; 0 for an empty matrix.
pub fn spectral_norm(x: &DenseMatrix) -> Result<f64> {
    let vals = singular_values(x)?;
    Ok(if vals.is_empty() { 0.0 } else { vals[0] })
}

/// Count of singular values above `rel_threshold · σ₁`.
pub fn numerical_rank(x: &DenseMatrix, rel_threshold: f64) -> Result<usize> {
    let vals = singular_values(x)?;
    if vals.is_empty() || vals[0] <= 0.0 {
        return Ok(0);
    }
    let cutoff = rel_threshold * vals[0];
    Ok(vals.iter().filter(|&&s| s > cutoff).count())
}

#[inline]
fn smoothed_rank_from_values(sigma: &DVector<f64>, delta: f64) -> f64 {
    // n - Σ exp(-σ²/2δ²) computed as Σ -expm1(-σ²/2δ²) to avoid
    // cancellation when δ is much larger than every σ
    sigma
        .iter()
        .map(|&s| -f64::exp_m1(-(s * s) / (2.0 * delta * delta)))
        .sum()
}

/// Smoothed rank `n − Σᵢ exp(−σᵢ²/2δ²)`; lies in `[0, min(rows, cols)]`
/// and is zero exactly when `X = 0`.
pub fn srf_value(x: &DenseMatrix, params: &SrfParams) -> Result<f64> {
    let sigma = singular_values(x)?;
    Ok(smoothed_rank_from_values(&sigma, params.delta()))
}

pub(crate) fn srf_value_from_singular_values(sigma: &DVector<f64>, delta: f64) -> f64 {
    smoothed_rank_from_values(sigma, delta)
}

/// Gradient of the Gaussian sum `Σᵢ f(σᵢ)` with respect to `X`:
/// `U diag(−(σᵢ/δ²) exp(−σᵢ²/2δ²)) Vᵀ`.
///
/// Note this is the gradient of the *sum*, not of the smoothed rank; the
/// smoothed-rank gradient is its negation.
pub fn srf_gradient(x: &DenseMatrix, params: &SrfParams) -> Result<DenseMatrix> {
    let svd = thin_svd(x)?;
    srf_gradient_from_svd(&svd, params.delta())
}

pub(crate) fn srf_gradient_from_svd(svd: &SvdResult, delta: f64) -> Result<DenseMatrix> {
    let k = svd.singular_values.len();
    let mut scaled = svd.left_vectors.clone();
    for i in 0..k {
        let s = svd.singular_values[i];
        let factor = -(s / (delta * delta)) * (-(s * s) / (2.0 * delta * delta)).exp();
        scaled.column_mut(i).scale_mut(factor);
    }
    let grad = &scaled * svd.right_vectors.transpose();
    DenseMatrix::from_inner(grad)
}

/// Relative distance between the smoothed rank and its large-δ limit
/// `‖X‖_F²/(2δ²)`. Shrinks as O(1/δ²); used to check the limit numerically.
pub fn frobenius_limit_gap(x: &DenseMatrix, delta: f64) -> Result<f64> {
    if !delta.is_finite() || delta <= 0.0 {
        return Err(QmcError::Domain(format!(
            "smoothing width must be positive, got {delta}"
        )));
    }
    let fro_sq = x.frobenius_norm().powi(2);
    if fro_sq == 0.0 {
        return Err(QmcError::Domain(
            "relative gap undefined for the zero matrix".into(),
        ));
    }
    let limit = fro_sq / (2.0 * delta * delta);
    let value = srf_value(x, &SrfParams::new(delta)?)?;
    Ok((value - limit).abs() / limit)
}

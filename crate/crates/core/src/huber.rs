//! Translated Huber penalty on quantization cells.
//!
//! For an entry reported at level center `m` with gap `g`, the penalty is
//! quadratic inside the cell and linear outside, shifted down by `g²/4`:
//!
//! ```text
//! h(x) = (x - m)²  - g²/4         if |x - m| ≤ g/2
//!        g(|x - m| - g/4) - g²/4  otherwise
//! ```
//!
//! so feasible entries earn a negative reward (minimum `-g²/4` at the
//! center), the cell boundary scores exactly zero, and violations grow
//! linearly. The function is convex and C¹: both branches and both
//! derivative branches agree at `|x - m| = g/2`.

use crate::error::{QmcError, Result};
use crate::matrix::DenseMatrix;
use crate::quantization::ObservedMatrix;

/// Gap and level center for one observed entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberParams {
    gap: f64,
    center: f64,
}

impl HuberParams {
    pub fn new(gap: f64, center: f64) -> Result<Self> {
        if !gap.is_finite() || gap <= 0.0 {
            return Err(QmcError::Domain(format!("gap must be positive, got {gap}")));
        }
        if !center.is_finite() {
            return Err(QmcError::Domain(format!("non-finite center {center}")));
        }
        Ok(Self { gap, center })
    }

    pub fn gap(&self) -> f64 {
        self.gap
    }

    pub fn center(&self) -> f64 {
        self.center
    }
}

#[inline]
pub(crate) fn value_raw(gap: f64, center: f64, x: f64) -> f64 {
    let d = x - center;
    let shift = gap * gap / 4.0;
    if d.abs() <= gap / 2.0 {
        d * d - shift
    } else {
        gap * (d.abs() - gap / 4.0) - shift
    }
}

#[inline]
pub(crate) fn derivative_raw(gap: f64, center: f64, x: f64) -> f64 {
    let d = x - center;
    if d <= -gap / 2.0 {
        -gap
    } else if d >= gap / 2.0 {
        gap
    } else {
        2.0 * d
    }
}

/// Translated Huber value at `x`.
pub fn huber_translated(params: &HuberParams, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(QmcError::Domain(format!("non-finite input {x}")));
    }
    Ok(value_raw(params.gap, params.center, x))
}

/// Derivative of the translated Huber at `x`: −g, 2(x−m), or g.
pub fn huber_derivative(params: &HuberParams, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(QmcError::Domain(format!("non-finite input {x}")));
    }
    Ok(derivative_raw(params.gap, params.center, x))
}

/// Sum of the translated Huber over the observation set Ω.
///
/// Bounded below by `-|Ω| g²/4`, attained when every observed entry sits at
/// its level center.
pub fn huber_sum(x: &DenseMatrix, obs: &ObservedMatrix) -> Result<f64> {
    obs.check_shape(x)?;
    let g = obs.scheme().gap();
    let mut total = 0.0;
    for o in obs.iter() {
        total += value_raw(g, obs.center_of(o), x.get(o.row, o.col));
    }
    Ok(total)
}

/// Entrywise gradient of [`huber_sum`]: the Huber derivative at observed
/// positions, zero elsewhere.
pub fn huber_gradient(x: &DenseMatrix, obs: &ObservedMatrix) -> Result<DenseMatrix> {
    obs.check_shape(x)?;
    let g = obs.scheme().gap();
    let mut grad = DenseMatrix::zeros(x.rows(), x.cols());
    for o in obs.iter() {
        let d = derivative_raw(g, obs.center_of(o), x.get(o.row, o.col));
        grad.set(o.row, o.col, d)?;
    }
    Ok(grad)
}

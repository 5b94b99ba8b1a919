//! Low-rank matrix recovery from quantized observations.
//!
//! A partially observed matrix is reported only through quantization
//! levels: every observed entry is known to lie within half a gap of its
//! level center. Recovery minimizes a smoothed rank surrogate
//! `min(m,n) − Σᵢ exp(−σᵢ²/2δ²)` plus a translated Huber penalty that
//! rewards staying inside the quantization cells, by gradient descent
//! inside a graduated non-convexity loop: start with a large smoothing
//! width δ (where the objective is essentially the strictly convex
//! `‖X‖_F²/2δ² + λH_Ω`), solve, shrink δ geometrically, and warm-start
//! each subproblem from the last solution.
//!
//! Modules:
//! - [`quantization`]: levels, gaps, cell bounds and the observation set.
//! - [`huber`]: the translated Huber penalty, its sum over observations
//!   and the masked gradient.
//! - [`srf`]: smoothed rank value and its SVD-based gradient.
//! - [`solver`]: warm start, inner gradient descent, continuation loop.
//! - [`diagnostics`]: λ-window calculator and a sampled Hessian convexity
//!   probe.
//! - [`data_io`]: ratings files, train/test splits, synthetic instances,
//!   matrix persistence.
//! - [`eval`]: RMSE/accuracy metrics, baselines, experiment grids and
//!   hyperparameter search.

pub mod data_io;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod huber;
pub mod matrix;
pub mod quantization;
pub mod solver;
pub mod srf;

pub use error::{QmcError, Result};
pub use matrix::DenseMatrix;
pub use quantization::{ObservedMatrix, Observation, QuantizationScheme};
pub use solver::{SolveReport, SolverConfig};

//! Desk-scale numerical diagnostics for the theory behind the solver.
//!
//! Two tools: a calculator for the regularization-weight interval inside
//! which the penalized and constrained problems provably share their
//! minimizer, and a Monte Carlo probe that builds the full Hessian of the
//! objective by finite differences of the analytic gradient and checks
//! positive semidefiniteness over a sampled Frobenius ball — the local
//! convexity that the continuation schedule is meant to preserve.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{QmcError, Result};
use crate::huber::huber_gradient;
use crate::matrix::DenseMatrix;
use crate::quantization::ObservedMatrix;
use crate::srf::{singular_values, srf_gradient, SrfParams};

/// Largest vectorized problem the probe will build a dense Hessian for.
const PROBE_SIZE_CAP: usize = 64;
/// Adjacent singular values closer than this mark a sample as non-smooth.
const SV_CROSSING_TOL: f64 = 1e-6;
/// Minimum eigenvalue tolerated as "positive semidefinite".
const PSD_TOL: f64 = 1e-6;

/// Regularization-weight interval from the uniqueness analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaWindow {
    /// r* / (Δ − (|Ω|−1)g²/4).
    pub lower: f64,
    /// 4 / (g²|Ω| + ε).
    pub upper: f64,
    /// Whether the interval is nonempty.
    pub feasible: bool,
}

/// Evaluate the window bounds for a target rank `r_star`, margin `delta_gap`
/// (the caller-supplied Δ), observation count, gap and slack ε.
///
/// Errors when the margin condition `Δ > (|Ω|−1)g²/4` fails, since the
/// lower bound is then meaningless.
pub fn lambda_window(
    r_star: usize,
    delta_gap: f64,
    omega_size: usize,
    g: f64,
    epsilon: f64,
) -> Result<LambdaWindow> {
    if r_star == 0 || omega_size == 0 {
        return Err(QmcError::Domain(
            "r_star and omega_size must be positive".into(),
        ));
    }
    for (name, v) in [("delta_gap", delta_gap), ("g", g), ("epsilon", epsilon)] {
        if !v.is_finite() || v <= 0.0 {
            return Err(QmcError::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    let margin = delta_gap - (omega_size as f64 - 1.0) * g * g / 4.0;
    if margin <= 0.0 {
        return Err(QmcError::AssumptionViolated(format!(
            "gap margin: delta_gap ({delta_gap}) must exceed (|omega|-1)g^2/4 ({})",
            (omega_size as f64 - 1.0) * g * g / 4.0
        )));
    }
    let lower = r_star as f64 / margin;
    let upper = 4.0 / (g * g * omega_size as f64 + epsilon);
    Ok(LambdaWindow {
        lower,
        upper,
        feasible: lower <= upper,
    })
}

/// Outcome of the sampled local-convexity check.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityProbeReport {
    pub delta_probed: f64,
    /// Samples requested.
    pub sample_points: usize,
    /// Samples skipped because of near-equal singular values, where the
    /// SVD-based gradient is not smooth.
    pub skipped_samples: usize,
    /// Smallest Hessian eigenvalue over the evaluated samples.
    pub min_eigenvalue_found: f64,
    /// min_eigenvalue_found ≥ −1e-6.
    pub condition_holds: bool,
}

// Same formula as the solver's objective gradient, but accepts λ = 0 so
// the probe can examine the smoothed-rank term alone.
fn probe_gradient(
    x: &DenseMatrix,
    obs: &ObservedMatrix,
    delta: f64,
    lambda: f64,
) -> Result<DenseMatrix> {
    let g_delta = srf_gradient(x, &SrfParams::new(delta)?)?;
    let g_huber = huber_gradient(x, obs)?;
    DenseMatrix::from_inner(-g_delta.as_inner() + lambda * g_huber.as_inner())
}

/// Full Hessian of the objective at `x` by central finite differences of
/// the analytic gradient on the vectorized (column-major) matrix.
pub fn fd_hessian(
    x: &DenseMatrix,
    obs: &ObservedMatrix,
    delta: f64,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    obs.check_shape(x)?;
    let (rows, cols) = (x.rows(), x.cols());
    let dim = rows * cols;
    if dim > PROBE_SIZE_CAP {
        return Err(QmcError::Capacity(format!(
            "Hessian probe limited to {PROBE_SIZE_CAP} entries, instance has {dim}"
        )));
    }
    let sigma = singular_values(x)?;
    let sigma_max = if sigma.is_empty() { 0.0 } else { sigma[0] };
    // the Gaussian terms vary on scale δ, so the step must resolve it
    let step = (1e-5 * sigma_max.max(1.0)).min(delta / 20.0).max(1e-9);

    let mut hessian = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let (i, j) = (k % rows, k / rows);
        let mut plus = x.clone();
        plus.set(i, j, x.get(i, j) + step)?;
        let mut minus = x.clone();
        minus.set(i, j, x.get(i, j) - step)?;
        let gp = probe_gradient(&plus, obs, delta, lambda)?;
        let gm = probe_gradient(&minus, obs, delta, lambda)?;
        for l in 0..dim {
            let (a, b) = (l % rows, l / rows);
            hessian[(l, k)] = (gp.get(a, b) - gm.get(a, b)) / (2.0 * step);
        }
    }
    Ok(hessian)
}

fn sample_in_ball(
    center: &DenseMatrix,
    radius: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DenseMatrix> {
    let (rows, cols) = (center.rows(), center.cols());
    let dim = (rows * cols) as f64;
    let mut dir = DMatrix::zeros(rows, cols);
    for v in dir.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    let norm = dir.norm();
    let scale = if norm > 0.0 && radius > 0.0 {
        radius * rng.random::<f64>().powf(1.0 / dim) / norm
    } else {
        0.0
    };
    DenseMatrix::from_inner(center.as_inner() + scale * dir)
}

/// Sample the Frobenius ball of `radius` around `x_star` and check the
/// objective Hessian for positive semidefiniteness at each point.
///
/// Samples whose singular values nearly coincide are skipped (the gradient
/// formula is not differentiable across crossings) and counted in the
/// report. `lambda` may be zero here: the probe examines the smoothed-rank
/// term alone in that case.
pub fn convexity_probe(
    x_star: &DenseMatrix,
    obs: &ObservedMatrix,
    delta: f64,
    lambda: f64,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<ConvexityProbeReport> {
    obs.check_shape(x_star)?;
    if samples == 0 {
        return Err(QmcError::Domain("need at least one sample".into()));
    }
    if !radius.is_finite() || radius < 0.0 {
        return Err(QmcError::Domain(format!("radius must be nonnegative, got {radius}")));
    }
    if !delta.is_finite() || delta <= 0.0 {
        return Err(QmcError::Domain(format!(
            "smoothing width must be positive, got {delta}"
        )));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(QmcError::Domain(format!(
            "regularization must be nonnegative, got {lambda}"
        )));
    }
    let dim = x_star.rows() * x_star.cols();
    if dim > PROBE_SIZE_CAP {
        return Err(QmcError::Capacity(format!(
            "Hessian probe limited to {PROBE_SIZE_CAP} entries, instance has {dim}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut skipped = 0usize;
    let mut min_eig = f64::INFINITY;

    for _ in 0..samples {
        let point = sample_in_ball(x_star, radius, &mut rng)?;
        let sigma = singular_values(&point)?;
        let crossing = sigma
            .iter()
            .zip(sigma.iter().skip(1))
            .any(|(a, b)| (a - b).abs() < SV_CROSSING_TOL);
        if crossing {
            skipped += 1;
            continue;
        }
        let h = fd_hessian(&point, obs, delta, lambda)?;
        let sym = (&h + h.transpose()) * 0.5;
        let eigs = sym.symmetric_eigenvalues();
        let local_min = eigs.iter().copied().fold(f64::INFINITY, f64::min);
        min_eig = min_eig.min(local_min);
    }

    if min_eig == f64::INFINITY {
        return Err(QmcError::Numerical(format!(
            "all {samples} probe samples were skipped near singular-value crossings"
        )));
    }

    Ok(ConvexityProbeReport {
        delta_probed: delta,
        sample_points: samples,
        skipped_samples: skipped,
        min_eigenvalue_found: min_eig,
        condition_holds: min_eig >= -PSD_TOL,
    })
}

/// Bisection result with the probed (δ, holds) trail, smallest passing δ
/// last confirmed.
pub fn suggest_delta_in_range(
    x_star: &DenseMatrix,
    obs: &ObservedMatrix,
    lambda: f64,
    radius: f64,
    samples: usize,
    seed: u64,
    delta_lo: f64,
    delta_hi: f64,
) -> Result<(f64, Vec<(f64, bool)>)> {
    if !(delta_lo.is_finite() && delta_hi.is_finite()) || delta_lo <= 0.0 || delta_hi <= delta_lo {
        return Err(QmcError::Domain(format!(
            "need 0 < delta_lo < delta_hi, got [{delta_lo}, {delta_hi}]"
        )));
    }
    let mut trace = Vec::new();
    let probe = |d: f64, trace: &mut Vec<(f64, bool)>| -> Result<bool> {
        let holds = convexity_probe(x_star, obs, d, lambda, radius, samples, seed)?.condition_holds;
        trace.push((d, holds));
        Ok(holds)
    };

    if !probe(delta_hi, &mut trace)? {
        return Err(QmcError::SearchFailure(format!(
            "convexity condition fails even at delta = {delta_hi}"
        )));
    }
    if probe(delta_lo, &mut trace)? {
        return Ok((delta_lo, trace));
    }

    let mut lo = delta_lo;
    let mut hi = delta_hi;
    while hi / lo > 1.01 {
        let mid = (lo * hi).sqrt();
        if probe(mid, &mut trace)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((hi, trace))
}

/// Smallest smoothing width (within `[1e-6, 1e3]·σ_max(X*)`) at which the
/// sampled convexity check passes, found by geometric bisection. An
/// approximation: the sampled points stand in for the whole ball.
pub fn suggest_delta(
    x_star: &DenseMatrix,
    obs: &ObservedMatrix,
    lambda: f64,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let sigma = singular_values(x_star)?;
    let sigma_max = if sigma.is_empty() { 0.0 } else { sigma[0] };
    if sigma_max <= 0.0 {
        return Err(QmcError::Domain(
            "suggest_delta needs a nonzero reference matrix".into(),
        ));
    }
    suggest_delta_in_range(
        x_star,
        obs,
        lambda,
        radius,
        samples,
        seed,
        1e-6 * sigma_max,
        1e3 * sigma_max,
    )
    .map(|(d, _)| d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantization::QuantizationScheme;
    use approx::assert_relative_eq;

    #[test]
    fn window_matches_hand_computation() {
        let w = lambda_window(2, 10.0, 4, 1.0, 0.01).unwrap();
        assert_relative_eq!(w.lower, 2.0 / 9.25, epsilon = 1e-12);
        assert_relative_eq!(w.upper, 4.0 / 4.01, epsilon = 1e-12);
        assert!(w.feasible);
    }

    #[test]
    fn window_margin_boundary_errors() {
        // Δ exactly equal to (|Ω|−1)g²/4
        match lambda_window(1, 0.75, 4, 1.0, 0.01) {
            Err(QmcError::AssumptionViolated(msg)) => {
                assert!(msg.contains("gap margin"), "{msg}")
            }
            other => panic!("expected assumption violation, got {other:?}"),
        }
    }

    #[test]
    fn window_infeasible_when_rank_demand_is_high() {
        let w = lambda_window(5, 2.0, 4, 1.0, 0.01).unwrap();
        assert_relative_eq!(w.lower, 4.0, epsilon = 1e-12);
        assert!(!w.feasible);
    }

    #[test]
    fn window_rejects_nonpositive_inputs() {
        assert!(lambda_window(0, 1.0, 4, 1.0, 0.01).is_err());
        assert!(lambda_window(1, 1.0, 0, 1.0, 0.01).is_err());
        assert!(lambda_window(1, -1.0, 4, 1.0, 0.01).is_err());
        assert!(lambda_window(1, 1.0, 4, 0.0, 0.01).is_err());
    }

    fn small_instance() -> (DenseMatrix, ObservedMatrix) {
        let scheme = QuantizationScheme::uniform(5, 1.0, 1.0).unwrap();
        let x = DenseMatrix::from_row_major(2, 2, &[2.1, 0.9, 1.2, 3.4]).unwrap();
        let obs = ObservedMatrix::new(
            2,
            2,
            vec![(0, 0, 1), (0, 1, 0), (1, 0, 0), (1, 1, 2)],
            scheme,
        )
        .unwrap();
        (x, obs)
    }

    #[test]
    fn probe_size_cap() {
        let scheme = QuantizationScheme::uniform(5, 1.0, 1.0).unwrap();
        let x = DenseMatrix::zeros(9, 9);
        let obs = ObservedMatrix::new(9, 9, vec![(0, 0, 0)], scheme).unwrap();
        match convexity_probe(&x, &obs, 1.0, 1.0, 0.1, 1, 0) {
            Err(QmcError::Capacity(_)) => {}
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn probe_degenerate_ball_evaluates_the_point_itself() {
        let (x, obs) = small_instance();
        let r = convexity_probe(&x, &obs, 100.0, 1.0, 0.0, 1, 7).unwrap();
        assert_eq!(r.sample_points, 1);
        assert_eq!(r.skipped_samples, 0);
        assert!(r.condition_holds);
    }

    #[test]
    fn probe_input_validation() {
        let (x, obs) = small_instance();
        assert!(convexity_probe(&x, &obs, 1.0, 1.0, 0.1, 0, 0).is_err());
        assert!(convexity_probe(&x, &obs, 0.0, 1.0, 0.1, 1, 0).is_err());
        assert!(convexity_probe(&x, &obs, 1.0, -1.0, 0.1, 1, 0).is_err());
        assert!(convexity_probe(&x, &obs, 1.0, 1.0, -0.5, 1, 0).is_err());
    }

    #[test]
    fn probe_skips_repeated_singular_values() {
        let scheme = QuantizationScheme::uniform(5, 1.0, 1.0).unwrap();
        // identity has a repeated singular value
        let x = DenseMatrix::from_row_major(2, 2, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let obs = ObservedMatrix::new(2, 2, vec![(0, 0, 0)], scheme).unwrap();
        match convexity_probe(&x, &obs, 1.0, 1.0, 0.0, 1, 0) {
            Err(QmcError::Numerical(msg)) => assert!(msg.contains("skipped"), "{msg}"),
            other => panic!("expected all-skipped error, got {other:?}"),
        }
    }

    #[test]
    fn suggest_delta_range_validation() {
        let (x, obs) = small_instance();
        assert!(suggest_delta_in_range(&x, &obs, 1.0, 0.1, 1, 0, 1.0, 0.5).is_err());
        assert!(suggest_delta_in_range(&x, &obs, 1.0, 0.1, 1, 0, 0.0, 1.0).is_err());
        let zero = DenseMatrix::zeros(2, 2);
        let zobs = obs.clone();
        assert!(suggest_delta(&zero, &zobs, 1.0, 0.1, 1, 0).is_err());
    }
}

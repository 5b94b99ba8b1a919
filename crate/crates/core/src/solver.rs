//! Graduated non-convexity solver for quantized matrix completion.
//!
//! Minimizes `n − F_δ(X) + λ·H_Ω(X)` — smoothed rank plus the translated
//! Huber penalty over the observation set — by plain gradient descent,
//! inside an outer continuation loop that starts with a large smoothing
//! width `δ = C·σ_max(M)` (where the objective is nearly the strictly
//! convex `‖X‖_F²/2δ² + λH_Ω`) and shrinks it geometrically, warm-starting
//! each subproblem from the previous solution.

use crate::error::{QmcError, Result};
use crate::huber;
use crate::matrix::DenseMatrix;
use crate::quantization::ObservedMatrix;
use crate::srf::{self, SrfParams};

/// Inputs of the continuation solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Gradient step size μ.
    pub step_size: f64,
    /// Smoothing decay factor α ∈ (0, 1) applied between outer iterations.
    pub decay_factor: f64,
    /// Huber weight λ.
    pub regularization: f64,
    /// Initial smoothing width constant C in δ₀ = C·σ_max(M).
    pub delta_init_constant: f64,
    /// Inner loop stops when the relative Frobenius change of the iterate
    /// falls below this.
    pub inner_tolerance: f64,
    /// Outer loop stops when consecutive subproblem solutions change by
    /// less than this (after the anneal has started moving; see `solve`).
    pub outer_tolerance: f64,
    pub max_inner_iterations: usize,
    pub max_outer_iterations: usize,
    /// Halve μ on objective increase instead of counting toward the
    /// divergence guard. Off by default: the reference procedure uses a
    /// fixed step.
    pub backtracking: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            decay_factor: 0.8,
            regularization: 1.0,
            delta_init_constant: 2.0,
            inner_tolerance: 1e-5,
            outer_tolerance: 1e-4,
            max_inner_iterations: 500,
            max_outer_iterations: 60,
            backtracking: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| -> Result<()> {
            if !v.is_finite() || v <= 0.0 {
                return Err(QmcError::Domain(format!("{name} must be positive, got {v}")));
            }
            Ok(())
        };
        pos("step_size", self.step_size)?;
        pos("regularization", self.regularization)?;
        pos("delta_init_constant", self.delta_init_constant)?;
        pos("inner_tolerance", self.inner_tolerance)?;
        pos("outer_tolerance", self.outer_tolerance)?;
        if !self.decay_factor.is_finite()
            || self.decay_factor <= 0.0
            || self.decay_factor >= 1.0
        {
            return Err(QmcError::Domain(format!(
                "decay_factor must lie in (0, 1), got {}",
                self.decay_factor
            )));
        }
        if self.max_inner_iterations == 0 || self.max_outer_iterations == 0 {
            return Err(QmcError::Domain("iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Result of one inner gradient-descent run.
#[derive(Debug, Clone)]
pub struct InnerRun {
    pub iterate: DenseMatrix,
    /// Objective value at the start point and after every accepted step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Full solve output: recovered matrix plus per-iteration traces.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub recovered: DenseMatrix,
    /// Smoothing width used in each outer iteration; consecutive entries
    /// differ exactly by the decay factor.
    pub delta_trace: Vec<f64>,
    /// Objective traces of the inner runs, grouped by outer iteration.
    pub objective_trace: Vec<Vec<f64>>,
    pub inner_iteration_counts: Vec<usize>,
    pub inner_converged: Vec<bool>,
    pub outer_iterations: usize,
    pub outer_converged: bool,
}

/// Objective `srf_value(X, δ) + λ·huber_sum(X)`.
pub fn objective(x: &DenseMatrix, obs: &ObservedMatrix, delta: f64, lambda: f64) -> Result<f64> {
    check_params(delta, lambda)?;
    let srf = srf::srf_value(x, &SrfParams::new(delta)?)?;
    let h = huber::huber_sum(x, obs)?;
    Ok(srf + lambda * h)
}

/// Gradient of [`objective`]: `−G_δ(X) + λ·G_H(X)` where `G_δ` is the
/// SVD-based gradient of the Gaussian sum.
pub fn objective_gradient(
    x: &DenseMatrix,
    obs: &ObservedMatrix,
    delta: f64,
    lambda: f64,
) -> Result<DenseMatrix> {
    check_params(delta, lambda)?;
    let g_delta = srf::srf_gradient(x, &SrfParams::new(delta)?)?;
    let g_huber = huber::huber_gradient(x, obs)?;
    DenseMatrix::from_inner(-g_delta.as_inner() + lambda * g_huber.as_inner())
}

fn check_params(delta: f64, lambda: f64) -> Result<()> {
    if !delta.is_finite() || delta <= 0.0 {
        return Err(QmcError::Domain(format!(
            "smoothing width must be positive, got {delta}"
        )));
    }
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(QmcError::Domain(format!(
            "regularization must be positive, got {lambda}"
        )));
    }
    Ok(())
}

/// One SVD per iterate: objective value and gradient together.
fn objective_and_gradient(
    x: &DenseMatrix,
    obs: &ObservedMatrix,
    delta: f64,
    lambda: f64,
) -> Result<(f64, DenseMatrix)> {
    let svd = srf::thin_svd(x)?;
    let srf_val = srf::srf_value_from_singular_values(&svd.singular_values, delta);
    let g_delta = srf::srf_gradient_from_svd(&svd, delta)?;
    let h = huber::huber_sum(x, obs)?;
    let g_huber = huber::huber_gradient(x, obs)?;
    let grad = DenseMatrix::from_inner(-g_delta.as_inner() + lambda * g_huber.as_inner())?;
    Ok((srf_val + lambda * h, grad))
}

/// Exact minimizer of the large-δ limit problem
/// `‖X‖_F²/(2δ²) + λ·H_Ω(X)`, solved entrywise in closed form.
///
/// Unobserved entries are zero. For an observed entry with center `m`,
/// with `t = 2λδ²`, the quadratic-branch candidate is `m·t/(1+t)`; if it
/// leaves the quadratic region the minimizer is the stationary point
/// `sign(m)·λgδ²` of the linear branch between zero and `m`, or the branch
/// junction `m − sign(m)·g/2` if neither stationary point is admissible.
pub fn init_warm_start(obs: &ObservedMatrix, delta: f64, lambda: f64) -> Result<DenseMatrix> {
    check_params(delta, lambda)?;
    let g = obs.scheme().gap();
    let mut x = DenseMatrix::zeros(obs.rows(), obs.cols());
    for o in obs.iter() {
        let m = obs.center_of(o);
        x.set(o.row, o.col, warm_start_scalar(g, m, lambda, delta))?;
    }
    Ok(x)
}

/// Scalar minimizer of `x²/(2δ²) + λ·h(x)` for one observed entry
/// (`h` the translated Huber with gap `g` and center `m`).
pub fn warm_start_scalar(gap: f64, center: f64, lambda: f64, delta: f64) -> f64 {
    let t = 2.0 * lambda * delta * delta;
    let quad = center * t / (1.0 + t);
    if (quad - center).abs() <= gap / 2.0 {
        return quad;
    }
    // the quadratic candidate escaped toward zero, so the minimizer sits in
    // the linear region between zero and the center (or at the junction)
    let sign = if center >= 0.0 { 1.0 } else { -1.0 };
    let linear = sign * lambda * gap * delta * delta;
    let junction = center - sign * gap / 2.0;
    let strictly_inside = if center > 0.0 {
        linear < junction
    } else {
        linear > junction
    };
    if strictly_inside {
        linear
    } else {
        junction
    }
}

/// Gradient descent on the objective at fixed δ.
///
/// Steps `X ← X − μ∇` until the relative Frobenius change of the iterate
/// drops below `inner_tolerance` or the iteration cap is hit. If the
/// objective rises for ten consecutive accepted steps the run aborts with a
/// step-size error (unless backtracking is enabled, which halves μ on each
/// increase instead).
pub fn inner_gd(
    x0: &DenseMatrix,
    obs: &ObservedMatrix,
    delta: f64,
    config: &SolverConfig,
) -> Result<InnerRun> {
    config.validate()?;
    obs.check_shape(x0)?;
    let lambda = config.regularization;
    let mut mu = config.step_size;

    let mut x = x0.clone();
    let (mut obj, mut grad) = objective_and_gradient(&x, obs, delta, lambda)?;
    let mut trace = vec![obj];
    let mut increase_streak = 0usize;

    for iter in 1..=config.max_inner_iterations {
        let candidate = x.as_inner() - mu * grad.as_inner();
        let next = DenseMatrix::from_inner(candidate).map_err(|_| QmcError::StepSize {
            mu,
            reason: "iterate left the finite range".into(),
        })?;
        let (next_obj, next_grad) = objective_and_gradient(&next, obs, delta, lambda)?;

        if next_obj > obj {
            if config.backtracking {
                mu /= 2.0;
                if mu < f64::MIN_POSITIVE {
                    return Err(QmcError::StepSize {
                        mu: config.step_size,
                        reason: "backtracking underflowed the step size".into(),
                    });
                }
                continue;
            }
            increase_streak += 1;
            if increase_streak >= 10 {
                return Err(QmcError::StepSize {
                    mu,
                    reason: "objective increased for 10 consecutive iterations".into(),
                });
            }
        } else {
            increase_streak = 0;
        }

        let rel = next.relative_change_from(&x)?;
        x = next;
        obj = next_obj;
        grad = next_grad;
        trace.push(obj);

        if rel < config.inner_tolerance {
            return Ok(InnerRun {
                iterate: x,
                objective_trace: trace,
                iterations: iter,
                converged: true,
            });
        }
    }

    Ok(InnerRun {
        iterate: x,
        objective_trace: trace,
        iterations: config.max_inner_iterations,
        converged: false,
    })
}

/// Full continuation solve.
///
/// Sets `δ₀ = C·σ_max(M)` on the zero-filled matrix of observed level
/// centers, takes the closed-form warm start, then alternates inner
/// gradient-descent runs with geometric shrinking of δ. The outer loop
/// stops once consecutive solutions change by less than the outer
/// tolerance — but only after some outer iteration has moved by at least
/// that much, since the warm start already solves the initial large-δ
/// subproblem to tolerance and would otherwise stop before the anneal
/// begins.
pub fn solve(obs: &ObservedMatrix, config: &SolverConfig) -> Result<SolveReport> {
    config.validate()?;
    if obs.is_empty() {
        return Err(QmcError::Domain(
            "observation set is empty; nothing to recover".into(),
        ));
    }

    let centers = obs.center_matrix();
    let sigma_max = srf::spectral_norm(&centers)?;
    // all-zero centers give no scale; fall back to the constant alone
    let mut delta = if sigma_max > 0.0 {
        config.delta_init_constant * sigma_max
    } else {
        config.delta_init_constant
    };

    let mut z = init_warm_start(obs, delta, config.regularization)?;

    let mut delta_trace = Vec::new();
    let mut objective_trace = Vec::new();
    let mut inner_iteration_counts = Vec::new();
    let mut inner_converged = Vec::new();
    let mut outer_iterations = 0;
    let mut outer_converged = false;
    let mut motion_seen = false;

    for _ in 0..config.max_outer_iterations {
        delta_trace.push(delta);
        let run = inner_gd(&z, obs, delta, config)?;
        outer_iterations += 1;

        let rel = run.iterate.relative_change_from(&z)?;
        z = run.iterate;
        objective_trace.push(run.objective_trace);
        inner_iteration_counts.push(run.iterations);
        inner_converged.push(run.converged);

        delta *= config.decay_factor;

        if rel >= config.outer_tolerance {
            motion_seen = true;
        } else if motion_seen {
            outer_converged = true;
            break;
        }
    }

    Ok(SolveReport {
        recovered: z,
        delta_trace,
        objective_trace,
        inner_iteration_counts,
        inner_converged,
        outer_iterations,
        outer_converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantization::{QuantizationScheme, ObservedMatrix, violation_count};
    use approx::assert_relative_eq;

    fn scheme() -> QuantizationScheme {
        QuantizationScheme::uniform(5, 1.0, 1.0).unwrap()
    }

    fn centered_obs() -> ObservedMatrix {
        // centers at level 0 requires a scheme containing 0
        let s = QuantizationScheme::new(vec![-1.0, 0.0, 1.0]).unwrap();
        ObservedMatrix::new(2, 2, vec![(0, 0, 1), (0, 1, 1), (1, 0, 1), (1, 1, 1)], s).unwrap()
    }

    #[test]
    fn objective_at_zero_with_zero_centers() {
        let obs = centered_obs();
        let x = DenseMatrix::zeros(2, 2);
        // SRF(0) = 0, each Huber term −g²/4 = −1/4, λ = 2
        assert_relative_eq!(objective(&x, &obs, 1.0, 2.0).unwrap(), -2.0, epsilon = 1e-14);
    }

    #[test]
    fn objective_with_empty_observations() {
        let obs = ObservedMatrix::new(2, 2, vec![], scheme()).unwrap();
        let x = DenseMatrix::zeros(2, 2);
        assert_eq!(objective(&x, &obs, 1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn gradient_vanishes_at_zero_with_zero_centers() {
        let obs = centered_obs();
        let x = DenseMatrix::zeros(2, 2);
        let g = objective_gradient(&x, &obs, 1.0, 1.0).unwrap();
        assert_eq!(g.frobenius_norm(), 0.0);
    }

    #[test]
    fn parameter_validation() {
        let obs = centered_obs();
        let x = DenseMatrix::zeros(2, 2);
        assert!(objective(&x, &obs, 0.0, 1.0).is_err());
        assert!(objective(&x, &obs, 1.0, -1.0).is_err());
        let mut bad = SolverConfig::default();
        bad.decay_factor = 1.0;
        assert!(bad.validate().is_err());
        bad = SolverConfig::default();
        bad.step_size = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn warm_start_quadratic_branch() {
        // large δ barely shrinks the center
        let x = warm_start_scalar(1.0, 3.0, 1.0, 10.0);
        assert_relative_eq!(x, 3.0 * 200.0 / 201.0, epsilon = 1e-12);
    }

    #[test]
    fn warm_start_linear_branch() {
        // quadratic candidate 2.0 violates |x−m| ≤ 1/2; linear candidate
        // λgδ² = 1.0 is strictly inside x ≤ 2.5
        assert_relative_eq!(warm_start_scalar(1.0, 3.0, 1.0, 1.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn warm_start_boundary_tie() {
        // t = 2λδ² = 5 puts the quadratic candidate exactly on the cell
        // boundary, which is also the linear-branch junction; both routes
        // give the same point
        assert_eq!(warm_start_scalar(1.0, 3.0, 2.5, 1.0), 2.5);
    }

    #[test]
    fn warm_start_tiny_weight_ends_near_zero() {
        // with almost no Huber weight the quadratic term wins and the
        // minimizer is the linear-branch stationary point λgδ²
        let x = warm_start_scalar(1.0, 3.0, 1e-6, 1.0);
        assert_relative_eq!(x, 1e-6, epsilon = 1e-15);
    }

    #[test]
    fn warm_start_negative_center_mirrors() {
        let pos = warm_start_scalar(1.0, 3.0, 1.0, 1.0);
        let neg = warm_start_scalar(1.0, -3.0, 1.0, 1.0);
        assert_relative_eq!(neg, -pos, epsilon = 1e-12);
    }

    #[test]
    fn warm_start_zeroes_unobserved() {
        let obs = ObservedMatrix::new(2, 3, vec![(0, 0, 2)], scheme()).unwrap();
        let x = init_warm_start(&obs, 10.0, 1.0).unwrap();
        assert_eq!(x.get(1, 2), 0.0);
        assert!(x.get(0, 0) > 0.0);
    }

    #[test]
    fn inner_gd_fixed_point_returns_after_one_iteration() {
        let obs = centered_obs();
        let x0 = DenseMatrix::zeros(2, 2);
        let run = inner_gd(&x0, &obs, 1.0, &SolverConfig::default()).unwrap();
        assert_eq!(run.iterations, 1);
        assert!(run.converged);
        assert_eq!(run.iterate, x0);
    }

    #[test]
    fn inner_gd_scalar_converges_to_warm_start_limit() {
        let obs = ObservedMatrix::new(1, 1, vec![(0, 0, 2)], scheme()).unwrap();
        let delta = 100.0;
        let cfg = SolverConfig {
            inner_tolerance: 1e-10,
            max_inner_iterations: 10_000,
            ..SolverConfig::default()
        };
        let x0 = DenseMatrix::zeros(1, 1);
        let run = inner_gd(&x0, &obs, delta, &cfg).unwrap();
        let expected = warm_start_scalar(1.0, 3.0, cfg.regularization, delta);
        assert!(run.converged);
        assert_relative_eq!(run.iterate.get(0, 0), expected, epsilon = 1e-4);
    }

    #[test]
    fn inner_gd_diverges_when_step_exceeds_stability() {
        // the Huber branch has curvature 2λ, so μ = 1.25/λ overshoots with
        // factor 2λμ − 1 = 1.5; starting near the minimizer the error and
        // the objective then grow monotonically until the guard trips
        let obs = ObservedMatrix::new(1, 1, vec![(0, 0, 2)], scheme()).unwrap();
        let cfg = SolverConfig {
            step_size: 1.25,
            regularization: 1.0,
            inner_tolerance: 1e-12,
            ..SolverConfig::default()
        };
        let x0 = DenseMatrix::from_row_major(1, 1, &[3.01]).unwrap();
        match inner_gd(&x0, &obs, 100.0, &cfg) {
            Err(QmcError::StepSize { mu, .. }) => assert_eq!(mu, 1.25),
            other => panic!("expected step-size error, got {other:?}"),
        }
    }

    #[test]
    fn backtracking_recovers_from_huge_step() {
        let obs = ObservedMatrix::new(1, 1, vec![(0, 0, 2)], scheme()).unwrap();
        let cfg = SolverConfig {
            step_size: 1e6,
            backtracking: true,
            max_inner_iterations: 5000,
            ..SolverConfig::default()
        };
        let x0 = DenseMatrix::zeros(1, 1);
        let run = inner_gd(&x0, &obs, 100.0, &cfg).unwrap();
        assert!(run.converged);
    }

    #[test]
    fn solve_rejects_empty_observations() {
        let obs = ObservedMatrix::new(2, 2, vec![], scheme()).unwrap();
        match solve(&obs, &SolverConfig::default()) {
            Err(QmcError::Domain(_)) => {}
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn solve_scalar_instance_is_feasible() {
        let obs = ObservedMatrix::new(1, 1, vec![(0, 0, 2)], scheme()).unwrap();
        let report = solve(&obs, &SolverConfig::default()).unwrap();
        let v = report.recovered.get(0, 0);
        assert!(v >= 2.5 && v <= 3.5, "recovered {v} outside the cell");
        assert_eq!(violation_count(&report.recovered, &obs).unwrap(), 0);
    }

    #[test]
    fn delta_trace_decays_exactly_by_alpha() {
        let obs = ObservedMatrix::new(1, 1, vec![(0, 0, 2)], scheme()).unwrap();
        let cfg = SolverConfig::default();
        let report = solve(&obs, &cfg).unwrap();
        for pair in report.delta_trace.windows(2) {
            assert_eq!(pair[1], pair[0] * cfg.decay_factor);
        }
        assert_eq!(report.delta_trace[0], cfg.delta_init_constant * 3.0);
    }
}

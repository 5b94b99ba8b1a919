//! Evaluation metrics, the experiment grid runner and hyperparameter
//! search.
//!
//! Experiments follow the benchmark protocol: withhold a fraction of the
//! known ratings (the missing rate), solve on the rest, score predictions
//! on the withheld set, and report one CSV row per (rate, seed) cell plus
//! a mean row per rate. Rows are computed independently — optionally in
//! parallel — and always emitted in (rate, seed) order so the output is
//! byte-stable.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use crate::data_io::{generate_synthetic, make_split};
use crate::error::{QmcError, Result};
use crate::matrix::DenseMatrix;
use crate::quantization::{ObservedMatrix, QuantizationScheme};
use crate::solver::{solve, SolverConfig};

/// Prediction quality on one held-out set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    /// RMSE of the recovered real values against held-out level centers.
    pub rmse_continuous: f64,
    /// RMSE after quantizing the recovered values to level centers.
    pub rmse_quantized: f64,
    /// Fraction of held-out entries whose quantized prediction matches the
    /// held-out level.
    pub accuracy: f64,
    /// RMSE of the global-mean predictor fit on the training set.
    pub baseline_rmse: f64,
}

/// Root mean square error of `recovered` against the level centers of the
/// held-out observations.
pub fn rmse(recovered: &DenseMatrix, test: &ObservedMatrix) -> Result<f64> {
    test.check_shape(recovered)?;
    if test.is_empty() {
        return Err(QmcError::Domain("empty evaluation set".into()));
    }
    let mut sum_sq = 0.0;
    for o in test.iter() {
        let r = recovered.get(o.row, o.col) - test.center_of(o);
        sum_sq += r * r;
    }
    Ok((sum_sq / test.len() as f64).sqrt())
}

/// RMSE after snapping each prediction to its nearest level center.
pub fn rmse_quantized(recovered: &DenseMatrix, test: &ObservedMatrix) -> Result<f64> {
    test.check_shape(recovered)?;
    if test.is_empty() {
        return Err(QmcError::Domain("empty evaluation set".into()));
    }
    let scheme = test.scheme();
    let mut sum_sq = 0.0;
    for o in test.iter() {
        let level = scheme.quantize(recovered.get(o.row, o.col))?;
        let r = scheme.level_values()[level] - test.center_of(o);
        sum_sq += r * r;
    }
    Ok((sum_sq / test.len() as f64).sqrt())
}

/// Fraction of held-out entries predicted at exactly the right level.
pub fn accuracy(recovered: &DenseMatrix, test: &ObservedMatrix) -> Result<f64> {
    test.check_shape(recovered)?;
    if test.is_empty() {
        return Err(QmcError::Domain("empty evaluation set".into()));
    }
    let scheme = test.scheme();
    let mut hits = 0usize;
    for o in test.iter() {
        if scheme.quantize(recovered.get(o.row, o.col))? == o.level {
            hits += 1;
        }
    }
    Ok(hits as f64 / test.len() as f64)
}

/// Constant matrix filled with the mean of the observed training centers.
pub fn baseline_mean_fill(train: &ObservedMatrix) -> Result<DenseMatrix> {
    if train.is_empty() {
        return Err(QmcError::Domain("empty training set".into()));
    }
    let mean =
        train.iter().map(|o| train.center_of(o)).sum::<f64>() / train.len() as f64;
    DenseMatrix::from_fn(train.rows(), train.cols(), |_, _| mean)
}

/// All four metrics of [`EvalResult`] for one recovery.
pub fn evaluate(
    recovered: &DenseMatrix,
    train: &ObservedMatrix,
    test: &ObservedMatrix,
) -> Result<EvalResult> {
    let baseline = baseline_mean_fill(train)?;
    Ok(EvalResult {
        rmse_continuous: rmse(recovered, test)?,
        rmse_quantized: rmse_quantized(recovered, test)?,
        accuracy: accuracy(recovered, test)?,
        baseline_rmse: rmse(&baseline, test)?,
    })
}

/// Where the full observation set of an experiment comes from.
#[derive(Debug, Clone)]
pub enum ExperimentSource {
    /// Use these observations directly (e.g. a loaded ratings file).
    Observed(ObservedMatrix),
    /// Generate a fully observed quantized low-rank instance.
    Synthetic {
        rows: usize,
        cols: usize,
        rank: usize,
        scheme: QuantizationScheme,
        seed: u64,
    },
}

impl ExperimentSource {
    fn materialize(&self) -> Result<ObservedMatrix> {
        match self {
            ExperimentSource::Observed(obs) => Ok(obs.clone()),
            ExperimentSource::Synthetic {
                rows,
                cols,
                rank,
                scheme,
                seed,
            } => Ok(generate_synthetic(*rows, *cols, *rank, scheme, 1.0, *seed)?.observed),
        }
    }
}

/// Full description of an experiment grid.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub source: ExperimentSource,
    pub missing_rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub solver: SolverConfig,
    /// Report 0.000 in the runtime column; wall-clock timings are the one
    /// nondeterministic output, so this makes repeated runs byte-identical.
    pub zero_runtime: bool,
}

/// Metrics of one successful (rate, seed) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMetrics {
    pub eval: EvalResult,
    pub runtime_seconds: f64,
    pub outer_iterations: usize,
}

/// One (rate, seed) cell: metrics or the recorded failure cause.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub missing_rate: f64,
    pub seed: u64,
    pub outcome: std::result::Result<CellMetrics, String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub cells: Vec<CellResult>,
}

pub const CSV_HEADER: &str =
    "missing_rate,seed,rmse_continuous,rmse_quantized,accuracy,runtime_seconds,outer_iters";

impl ExperimentReport {
    /// CSV body: header, one row per successful cell, and a `mean` row per
    /// missing rate (arithmetic mean over that rate's successful cells).
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CSV_HEADER}");

        let mut rates: Vec<f64> = Vec::new();
        for c in &self.cells {
            if !rates.iter().any(|&r| r == c.missing_rate) {
                rates.push(c.missing_rate);
            }
        }

        for rate in rates {
            let mut summed: Option<(CellMetrics, usize)> = None;
            for c in self.cells.iter().filter(|c| c.missing_rate == rate) {
                if let Ok(m) = &c.outcome {
                    let _ = writeln!(
                        out,
                        "{:.6},{},{:.6},{:.6},{:.6},{:.3},{}",
                        c.missing_rate,
                        c.seed,
                        m.eval.rmse_continuous,
                        m.eval.rmse_quantized,
                        m.eval.accuracy,
                        m.runtime_seconds,
                        m.outer_iterations
                    );
                    summed = Some(match summed {
                        None => (m.clone(), 1),
                        Some((mut acc, n)) => {
                            acc.eval.rmse_continuous += m.eval.rmse_continuous;
                            acc.eval.rmse_quantized += m.eval.rmse_quantized;
                            acc.eval.accuracy += m.eval.accuracy;
                            acc.eval.baseline_rmse += m.eval.baseline_rmse;
                            acc.runtime_seconds += m.runtime_seconds;
                            acc.outer_iterations += m.outer_iterations;
                            (acc, n + 1)
                        }
                    });
                }
            }
            if let Some((acc, n)) = summed {
                let n = n as f64;
                let _ = writeln!(
                    out,
                    "{:.6},mean,{:.6},{:.6},{:.6},{:.3},{:.6}",
                    rate,
                    acc.eval.rmse_continuous / n,
                    acc.eval.rmse_quantized / n,
                    acc.eval.accuracy / n,
                    acc.runtime_seconds / n,
                    acc.outer_iterations as f64 / n
                );
            }
        }
        out
    }

    /// Mean continuous RMSE per missing rate over successful cells, in the
    /// order the rates were run.
    pub fn mean_rmse_by_rate(&self) -> Vec<(f64, f64)> {
        let mut rates: Vec<f64> = Vec::new();
        for c in &self.cells {
            if !rates.iter().any(|&r| r == c.missing_rate) {
                rates.push(c.missing_rate);
            }
        }
        rates
            .into_iter()
            .filter_map(|rate| {
                let vals: Vec<f64> = self
                    .cells
                    .iter()
                    .filter(|c| c.missing_rate == rate)
                    .filter_map(|c| c.outcome.as_ref().ok())
                    .map(|m| m.eval.rmse_continuous)
                    .collect();
                if vals.is_empty() {
                    None
                } else {
                    Some((rate, vals.iter().sum::<f64>() / vals.len() as f64))
                }
            })
            .collect()
    }
}

fn run_cell(
    full: &ObservedMatrix,
    rate: f64,
    seed: u64,
    solver: &SolverConfig,
    zero_runtime: bool,
) -> std::result::Result<CellMetrics, String> {
    let split = make_split(full, rate, seed).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let report = solve(&split.train, solver).map_err(|e| e.to_string())?;
    let runtime = if zero_runtime {
        0.0
    } else {
        start.elapsed().as_secs_f64()
    };
    let eval = evaluate(&report.recovered, &split.train, &split.test)
        .map_err(|e| e.to_string())?;
    Ok(CellMetrics {
        eval,
        runtime_seconds: runtime,
        outer_iterations: report.outer_iterations,
    })
}

/// Run the full (missing rate × seed) grid. Cells run independently (in
/// parallel under an ambient rayon pool); failures are recorded per cell
/// and do not abort the rest.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    if plan.missing_rates.is_empty() || plan.seeds.is_empty() {
        return Err(QmcError::Domain(
            "need at least one missing rate and one seed".into(),
        ));
    }
    plan.solver.validate()?;
    let full = plan.source.materialize()?;

    let jobs: Vec<(f64, u64)> = plan
        .missing_rates
        .iter()
        .flat_map(|&r| plan.seeds.iter().map(move |&s| (r, s)))
        .collect();

    let cells: Vec<CellResult> = jobs
        .par_iter()
        .map(|&(rate, seed)| CellResult {
            missing_rate: rate,
            seed,
            outcome: run_cell(&full, rate, seed, &plan.solver, plan.zero_runtime),
        })
        .collect();

    Ok(ExperimentReport { cells })
}

/// Candidate values for each solver hyperparameter.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub mu: Vec<f64>,
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
    pub c: Vec<f64>,
}

/// One evaluated grid point.
#[derive(Debug, Clone)]
pub struct GridCell {
    pub mu: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub c: f64,
    pub outcome: std::result::Result<f64, String>,
}

#[derive(Debug, Clone)]
pub struct GridSearchOutcome {
    pub best: SolverConfig,
    pub best_rmse: f64,
    pub table: Vec<GridCell>,
}

/// Exhaustive search over the Cartesian grid, scored by continuous RMSE on
/// the validation set. Ties break toward the lexicographically smallest
/// (μ, α, λ, C); grid points whose solve fails are recorded and skipped.
pub fn grid_search(
    base: &SolverConfig,
    grids: &GridSpec,
    train: &ObservedMatrix,
    validation: &ObservedMatrix,
) -> Result<GridSearchOutcome> {
    if grids.mu.is_empty() || grids.alpha.is_empty() || grids.lambda.is_empty() || grids.c.is_empty()
    {
        return Err(QmcError::Domain("every hyperparameter grid must be nonempty".into()));
    }
    if validation.is_empty() {
        return Err(QmcError::Domain("empty validation set".into()));
    }

    let mut points = Vec::new();
    for &mu in &grids.mu {
        for &alpha in &grids.alpha {
            for &lambda in &grids.lambda {
                for &c in &grids.c {
                    points.push((mu, alpha, lambda, c));
                }
            }
        }
    }

    let table: Vec<GridCell> = points
        .par_iter()
        .map(|&(mu, alpha, lambda, c)| {
            let cfg = SolverConfig {
                step_size: mu,
                decay_factor: alpha,
                regularization: lambda,
                delta_init_constant: c,
                ..base.clone()
            };
            let outcome = cfg
                .validate()
                .and_then(|_| solve(train, &cfg))
                .and_then(|report| rmse(&report.recovered, validation))
                .map_err(|e| e.to_string());
            GridCell {
                mu,
                alpha,
                lambda,
                c,
                outcome,
            }
        })
        .collect();

    // table is in lexicographic grid order, so strict improvement keeps the
    // lexicographically smallest argmin
    let mut best: Option<(&GridCell, f64)> = None;
    for cell in &table {
        if let Ok(score) = cell.outcome {
            if best.map_or(true, |(_, s)| score < s) {
                best = Some((cell, score));
            }
        }
    }
    let (best_cell, best_rmse) = best.ok_or_else(|| {
        QmcError::SearchFailure("every grid point failed to solve".into())
    })?;

    Ok(GridSearchOutcome {
        best: SolverConfig {
            step_size: best_cell.mu,
            decay_factor: best_cell.alpha,
            regularization: best_cell.lambda,
            delta_init_constant: best_cell.c,
            ..base.clone()
        },
        best_rmse,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scheme() -> QuantizationScheme {
        QuantizationScheme::uniform(5, 1.0, 1.0).unwrap()
    }

    fn obs_of(levels: &[usize]) -> ObservedMatrix {
        let triples: Vec<(usize, usize, usize)> = levels
            .iter()
            .enumerate()
            .map(|(k, &l)| (k / 3, k % 3, l))
            .collect();
        ObservedMatrix::new(levels.len() / 3 + 1, 3, triples, scheme()).unwrap()
    }

    #[test]
    fn rmse_zero_when_exact_and_g_when_off_by_gap() {
        let test = obs_of(&[2, 2, 2, 2]);
        let exact = test.center_matrix();
        assert_eq!(rmse(&exact, &test).unwrap(), 0.0);

        let mut off = test.center_matrix();
        for o in test.iter() {
            off.set(o.row, o.col, test.center_of(o) + 1.0).unwrap();
        }
        assert_relative_eq!(rmse(&off, &test).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rmse_rejects_empty_test_set() {
        let empty = ObservedMatrix::new(1, 3, vec![], scheme()).unwrap();
        let x = DenseMatrix::zeros(1, 3);
        assert!(rmse(&x, &empty).is_err());
        assert!(accuracy(&x, &empty).is_err());
    }

    #[test]
    fn baseline_is_the_arithmetic_mean() {
        let train = obs_of(&[2, 2, 2]); // all centers 3
        let b = baseline_mean_fill(&train).unwrap();
        assert_eq!(b.get(0, 0), 3.0);

        let train2 = obs_of(&[0, 4]); // centers 1 and 5
        let b2 = baseline_mean_fill(&train2).unwrap();
        assert_eq!(b2.get(0, 2), 3.0);

        let single = obs_of(&[1]); // center 2
        assert_eq!(baseline_mean_fill(&single).unwrap().get(0, 0), 2.0);

        let empty = ObservedMatrix::new(1, 3, vec![], scheme()).unwrap();
        assert!(baseline_mean_fill(&empty).is_err());
    }

    #[test]
    fn quantized_metrics_snap_to_levels() {
        let test = obs_of(&[2, 3]);
        let mut x = DenseMatrix::zeros(1, 3);
        x.set(0, 0, 3.2).unwrap(); // quantizes to level 2, exact hit
        x.set(0, 1, 4.6).unwrap(); // quantizes to level 4 (center 5), true level 3
        assert_relative_eq!(
            rmse_quantized(&x, &test).unwrap(),
            (0.5f64).sqrt(),
            epsilon = 1e-12
        );
        assert_relative_eq!(accuracy(&x, &test).unwrap(), 0.5, epsilon = 1e-12);
    }

    fn small_plan(seeds: Vec<u64>) -> ExperimentPlan {
        ExperimentPlan {
            source: ExperimentSource::Synthetic {
                rows: 12,
                cols: 10,
                rank: 2,
                scheme: scheme(),
                seed: 9,
            },
            missing_rates: vec![0.2],
            seeds,
            solver: SolverConfig {
                max_outer_iterations: 12,
                max_inner_iterations: 80,
                ..SolverConfig::default()
            },
            zero_runtime: true,
        }
    }

    #[test]
    fn experiment_emits_one_row_per_cell_plus_mean() {
        let report = run_experiment(&small_plan(vec![1, 2, 3])).unwrap();
        assert_eq!(report.cells.len(), 3);
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 1 + 3 + 1);
        assert!(lines[4].contains(",mean,"));
    }

    #[test]
    fn experiment_is_deterministic() {
        let a = run_experiment(&small_plan(vec![4, 5])).unwrap().to_csv();
        let b = run_experiment(&small_plan(vec![4, 5])).unwrap().to_csv();
        assert_eq!(a, b);
    }

    #[test]
    fn experiment_records_failures_and_continues() {
        let mut plan = small_plan(vec![1, 2]);
        // μ = 1.25 overshoots the Huber curvature (2λμ − 1 = 1.5): once the
        // anneal starts moving, the objective rises until the guard trips
        plan.solver.step_size = 1.25;
        let report = run_experiment(&plan).unwrap();
        assert_eq!(report.cells.len(), 2);
        assert!(report.cells.iter().all(|c| c.outcome.is_err()));
        // CSV still renders with just the header
        assert_eq!(report.to_csv().lines().count(), 1);
    }

    #[test]
    fn grid_search_singleton_and_failure_handling() {
        let inst = generate_synthetic(12, 10, 2, &scheme(), 1.0, 21).unwrap();
        let split = make_split(&inst.observed, 0.2, 1).unwrap();
        let val = make_split(&split.train, 0.15, 2).unwrap();
        let base = SolverConfig {
            max_outer_iterations: 12,
            max_inner_iterations: 80,
            ..SolverConfig::default()
        };

        let singleton = GridSpec {
            mu: vec![0.1],
            alpha: vec![0.8],
            lambda: vec![1.0],
            c: vec![2.0],
        };
        let out = grid_search(&base, &singleton, &val.train, &val.test).unwrap();
        assert_eq!(out.best.step_size, 0.1);
        assert_eq!(out.table.len(), 1);

        // one diverging step size and one sane value: the survivor must win
        let mixed = GridSpec {
            mu: vec![1.25, 0.1],
            alpha: vec![0.8],
            lambda: vec![1.0],
            c: vec![2.0],
        };
        let out2 = grid_search(&base, &mixed, &val.train, &val.test).unwrap();
        assert_eq!(out2.best.step_size, 0.1);
        assert_eq!(out2.table.len(), 2);
        assert!(out2.table.iter().any(|c| c.outcome.is_err()));

        // all points failing is a search failure
        let hopeless = GridSpec {
            mu: vec![1.25],
            alpha: vec![0.8],
            lambda: vec![1.0],
            c: vec![2.0],
        };
        assert!(matches!(
            grid_search(&base, &hopeless, &val.train, &val.test),
            Err(QmcError::SearchFailure(_))
        ));

        let none = GridSpec {
            mu: vec![],
            alpha: vec![0.8],
            lambda: vec![1.0],
            c: vec![2.0],
        };
        assert!(grid_search(&base, &none, &val.train, &val.test).is_err());
    }
}

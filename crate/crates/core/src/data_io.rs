//! Dataset ingestion, train/test masking, synthetic instance generation
//! and matrix persistence.
//!
//! Ratings files follow the MovieLens `u.data` convention: one record per
//! line, `user<TAB>item<TAB>rating<TAB>timestamp`, ids 1-based, the rating
//! equal to a level center of the quantization scheme. Matrices persist as
//! text: a `rows cols` header line, then one space-separated row per line
//! with full round-trip precision.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{QmcError, Result};
use crate::matrix::DenseMatrix;
use crate::quantization::{ObservedMatrix, QuantizationScheme};
use crate::srf::singular_values;

/// One parsed rating record, 0-based indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RatingRecord {
    pub user: usize,
    pub item: usize,
    /// Index into the quantization scheme's levels.
    pub level: usize,
    pub timestamp: i64,
}

/// A ratings file in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsDataset {
    pub user_count: usize,
    pub item_count: usize,
    pub records: Vec<RatingRecord>,
}

impl RatingsDataset {
    /// Observation matrix with dimensions inferred from the data
    /// (max index + 1).
    pub fn to_observed(&self, scheme: &QuantizationScheme) -> Result<ObservedMatrix> {
        self.to_observed_with_dims(scheme, self.user_count, self.item_count)
    }

    /// Observation matrix with explicit dimensions (must cover the data).
    pub fn to_observed_with_dims(
        &self,
        scheme: &QuantizationScheme,
        rows: usize,
        cols: usize,
    ) -> Result<ObservedMatrix> {
        let triples = self
            .records
            .iter()
            .map(|r| (r.user, r.item, r.level))
            .collect();
        ObservedMatrix::new(rows, cols, triples, scheme.clone())
    }
}

/// Parse a ratings file. Ratings must equal a level center of `scheme`;
/// duplicate (user, item) pairs are rejected.
pub fn load_ratings(
    path: impl AsRef<Path>,
    delimiter: char,
    scheme: &QuantizationScheme,
) -> Result<RatingsDataset> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    let mut user_count = 0usize;
    let mut item_count = 0usize;

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(delimiter).map(str::trim).collect();
        if fields.len() != 4 {
            return Err(QmcError::Parse {
                line: line_no,
                message: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let user: usize = fields[0].parse().map_err(|_| QmcError::Parse {
            line: line_no,
            message: format!("bad user id {:?}", fields[0]),
        })?;
        let item: usize = fields[1].parse().map_err(|_| QmcError::Parse {
            line: line_no,
            message: format!("bad item id {:?}", fields[1]),
        })?;
        if user == 0 || item == 0 {
            return Err(QmcError::Parse {
                line: line_no,
                message: "user and item ids are 1-based".into(),
            });
        }
        let rating: f64 = fields[2].parse().map_err(|_| QmcError::Parse {
            line: line_no,
            message: format!("bad rating {:?}", fields[2]),
        })?;
        let timestamp: i64 = fields[3].parse().map_err(|_| QmcError::Parse {
            line: line_no,
            message: format!("bad timestamp {:?}", fields[3]),
        })?;

        let level = scheme.quantize(rating).map_err(|e| QmcError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let center = scheme.level_values()[level];
        if (rating - center).abs() > 1e-9 * center.abs().max(1.0) {
            return Err(QmcError::Validation(format!(
                "line {line_no}: rating {rating} is not a level center of the scheme"
            )));
        }

        user_count = user_count.max(user);
        item_count = item_count.max(item);
        records.push(RatingRecord {
            user: user - 1,
            item: item - 1,
            level,
            timestamp,
        });
    }

    let mut keys: Vec<(usize, usize)> = records.iter().map(|r| (r.user, r.item)).collect();
    keys.sort_unstable();
    for pair in keys.windows(2) {
        if pair[0] == pair[1] {
            return Err(QmcError::Validation(format!(
                "duplicate rating for user {} item {}",
                pair[0].0 + 1,
                pair[0].1 + 1
            )));
        }
    }

    Ok(RatingsDataset {
        user_count,
        item_count,
        records,
    })
}

/// Disjoint train/test partition of an observation set.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSplit {
    pub train: ObservedMatrix,
    pub test: ObservedMatrix,
    pub missing_rate: f64,
    pub seed: u64,
}

/// Withhold `floor(missing_rate·|Ω|)` uniformly chosen observations as the
/// test set. Deterministic per seed.
pub fn make_split(obs: &ObservedMatrix, missing_rate: f64, seed: u64) -> Result<MaskSplit> {
    if !missing_rate.is_finite() || missing_rate <= 0.0 || missing_rate >= 1.0 {
        return Err(QmcError::Domain(format!(
            "missing rate must lie in (0, 1), got {missing_rate}"
        )));
    }
    let total = obs.len();
    let test_size = (missing_rate * total as f64).floor() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, total, test_size).into_vec();
    chosen.sort_unstable();

    let all: Vec<(usize, usize, usize)> = obs.iter().map(|o| (o.row, o.col, o.level)).collect();
    let mut test = Vec::with_capacity(test_size);
    let mut train = Vec::with_capacity(total - test_size);
    let mut next = chosen.iter().peekable();
    for (idx, triple) in all.into_iter().enumerate() {
        if next.peek() == Some(&&idx) {
            test.push(triple);
            next.next();
        } else {
            train.push(triple);
        }
    }

    Ok(MaskSplit {
        train: ObservedMatrix::new(obs.rows(), obs.cols(), train, obs.scheme().clone())?,
        test: ObservedMatrix::new(obs.rows(), obs.cols(), test, obs.scheme().clone())?,
        missing_rate,
        seed,
    })
}

/// Ground truth plus its quantized, masked observation of it.
#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    pub ground_truth: DenseMatrix,
    pub observed: ObservedMatrix,
    pub true_rank: usize,
    pub seed: u64,
}

impl SyntheticInstance {
    /// Quantized ground truth at the positions *not* in the observation
    /// set — the natural held-out evaluation set for synthetic runs.
    pub fn heldout_observed(&self) -> Result<ObservedMatrix> {
        let scheme = self.observed.scheme().clone();
        let mut covered =
            vec![false; self.ground_truth.rows() * self.ground_truth.cols()];
        for o in self.observed.iter() {
            covered[o.row * self.ground_truth.cols() + o.col] = true;
        }
        let mut triples = Vec::new();
        for i in 0..self.ground_truth.rows() {
            for j in 0..self.ground_truth.cols() {
                if !covered[i * self.ground_truth.cols() + j] {
                    triples.push((i, j, scheme.quantize(self.ground_truth.get(i, j))?));
                }
            }
        }
        ObservedMatrix::new(
            self.ground_truth.rows(),
            self.ground_truth.cols(),
            triples,
            scheme,
        )
    }
}

// Target interval for synthetic entries: a quarter-gap inside the extreme
// cell bounds, so no entry lands on a clamping boundary.
fn synthetic_target(scheme: &QuantizationScheme) -> (f64, f64) {
    let g = scheme.gap();
    let lo = scheme.level_values()[0] - g / 4.0;
    let hi = scheme.level_values()[scheme.num_levels() - 1] + g / 4.0;
    (lo, hi)
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

// Rank-r matrix whose entries span [t_lo, t_hi]. The affine shift that
// places the entries is carried by the all-ones direction, which is folded
// into the factor span so the rank stays exactly r instead of r+1.
fn low_rank_spanning(
    rows: usize,
    cols: usize,
    rank: usize,
    t_lo: f64,
    t_hi: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DenseMatrix> {
    if rank == 1 {
        return rank_one_spanning(rows, cols, t_lo, t_hi, rng);
    }
    let a = gaussian_matrix(rows, rank - 1, rng);
    let b = gaussian_matrix(cols, rank - 1, rng);
    let y = a * b.transpose();
    let (y_min, y_max) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, &v| {
        (acc.0.min(v), acc.1.max(v))
    });
    if !(y_max - y_min).is_normal() {
        return Err(QmcError::Numerical(
            "degenerate factor product; try another seed".into(),
        ));
    }
    let mut lo = t_lo;
    let scale = (t_hi - lo) / (y_max - y_min);
    let mut shift = lo - scale * y_min;
    if shift == 0.0 {
        // a zero shift would drop the ones direction and the rank with it
        lo += (t_hi - t_lo) * 1e-3;
        let scale2 = (t_hi - lo) / (y_max - y_min);
        shift = lo - scale2 * y_min;
        return DenseMatrix::from_inner(y.map(|v| scale2 * v + shift));
    }
    DenseMatrix::from_inner(y.map(|v| scale * v + shift))
}

// Rank-1 instances cannot take an additive shift at all, so entries come
// from a positive outer product exp(ε·z_u)·exp(ε·z_v)ᵀ when the target
// interval is positive (ε tuned so min/max hit the targets exactly), and
// from a scaled Gaussian outer product kept inside the interval otherwise.
fn rank_one_spanning(
    rows: usize,
    cols: usize,
    t_lo: f64,
    t_hi: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DenseMatrix> {
    if t_lo > 0.0 {
        let zu: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(rng)).collect();
        let zv: Vec<f64> = (0..cols).map(|_| StandardNormal.sample(rng)).collect();
        let fold = |z: &[f64]| {
            z.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |acc, &v| {
                    (acc.0.min(v), acc.1.max(v))
                })
        };
        let (u_min, u_max) = fold(&zu);
        let (v_min, v_max) = fold(&zv);
        let spread = (u_max + v_max) - (u_min + v_min);
        if !spread.is_normal() {
            return Err(QmcError::Numerical(
                "degenerate rank-1 spread; try another seed".into(),
            ));
        }
        let eps = (t_hi / t_lo).ln() / spread;
        let scale = t_hi / ((eps * (u_max + v_max)).exp());
        return DenseMatrix::from_fn(rows, cols, |i, j| {
            scale * (eps * (zu[i] + zv[j])).exp()
        });
    }
    // interval touches or crosses zero: scale a Gaussian outer product to
    // fit inside; one side of the interval is attained exactly
    let u: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(rng)).collect();
    let v: Vec<f64> = (0..cols).map(|_| StandardNormal.sample(rng)).collect();
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for &a in &u {
        for &b in &v {
            y_min = y_min.min(a * b);
            y_max = y_max.max(a * b);
        }
    }
    let mut scale = f64::INFINITY;
    if y_max > 0.0 && t_hi > 0.0 {
        scale = scale.min(t_hi / y_max);
    }
    if y_min < 0.0 && t_lo < 0.0 {
        scale = scale.min(t_lo / y_min);
    }
    if !scale.is_finite() || scale <= 0.0 {
        return Err(QmcError::Numerical(
            "rank-1 sample does not fit the level range; try another seed".into(),
        ));
    }
    DenseMatrix::from_fn(rows, cols, |i, j| scale * u[i] * v[j])
}

/// Draw a seeded low-rank ground truth whose entries fill the scheme's
/// level range, quantize every entry, and keep a uniform fraction of the
/// positions as the observation set.
pub fn generate_synthetic(
    rows: usize,
    cols: usize,
    rank: usize,
    scheme: &QuantizationScheme,
    observation_fraction: f64,
    seed: u64,
) -> Result<SyntheticInstance> {
    if rows == 0 || cols == 0 {
        return Err(QmcError::Domain("matrix dimensions must be positive".into()));
    }
    if rank == 0 || rank > rows.min(cols) {
        return Err(QmcError::Domain(format!(
            "rank must lie in [1, {}], got {rank}",
            rows.min(cols)
        )));
    }
    if !observation_fraction.is_finite()
        || observation_fraction <= 0.0
        || observation_fraction > 1.0
    {
        return Err(QmcError::Domain(format!(
            "observation fraction must lie in (0, 1], got {observation_fraction}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t_lo, t_hi) = synthetic_target(scheme);
    let ground_truth = low_rank_spanning(rows, cols, rank, t_lo, t_hi, &mut rng)?;

    let sigma = singular_values(&ground_truth)?;
    let ok_rank = sigma[rank - 1] > 1e-10 * sigma[0]
        && (rank == rows.min(cols) || sigma[rank] < 1e-10 * sigma[0]);
    if !ok_rank {
        return Err(QmcError::Numerical(format!(
            "generated matrix missed the target rank {rank}; try another seed"
        )));
    }

    let total = rows * cols;
    let keep = (observation_fraction * total as f64).floor() as usize;
    let mut chosen = rand::seq::index::sample(&mut rng, total, keep).into_vec();
    chosen.sort_unstable();
    let triples = chosen
        .into_iter()
        .map(|k| {
            let (i, j) = (k / cols, k % cols);
            Ok((i, j, scheme.quantize(ground_truth.get(i, j))?))
        })
        .collect::<Result<Vec<_>>>()?;
    let observed = ObservedMatrix::new(rows, cols, triples, scheme.clone())?;

    Ok(SyntheticInstance {
        ground_truth,
        observed,
        true_rank: rank,
        seed,
    })
}

/// Serialize a matrix in the text format (`rows cols` header, one row per
/// line, shortest round-trip decimal representation).
pub fn matrix_to_string(m: &DenseMatrix) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", m.rows(), m.cols());
    for i in 0..m.rows() {
        let row: Vec<String> = (0..m.cols()).map(|j| format!("{}", m.get(i, j))).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn save_matrix(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    fs::write(path, matrix_to_string(m))?;
    Ok(())
}

/// Parse the text format produced by [`save_matrix`].
pub fn matrix_from_string(text: &str) -> Result<DenseMatrix> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(QmcError::Parse {
        line: 1,
        message: "missing header line".into(),
    })?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(QmcError::Parse {
            line: 1,
            message: format!("expected 'rows cols', got {header:?}"),
        });
    }
    let rows: usize = dims[0].parse().map_err(|_| QmcError::Parse {
        line: 1,
        message: format!("bad row count {:?}", dims[0]),
    })?;
    let cols: usize = dims[1].parse().map_err(|_| QmcError::Parse {
        line: 1,
        message: format!("bad column count {:?}", dims[1]),
    })?;

    let mut entries = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let line_no = r + 2;
        let line = lines.next().ok_or(QmcError::Parse {
            line: line_no,
            message: format!("expected {rows} data rows, file ends at row {r}"),
        })?;
        let values: Vec<&str> = line.split_whitespace().collect();
        if values.len() != cols {
            return Err(QmcError::Parse {
                line: line_no,
                message: format!("expected {cols} values, got {}", values.len()),
            });
        }
        for v in values {
            entries.push(v.parse::<f64>().map_err(|_| QmcError::Parse {
                line: line_no,
                message: format!("bad value {v:?}"),
            })?);
        }
    }
    for (extra_idx, line) in lines.enumerate() {
        if !line.trim().is_empty() {
            return Err(QmcError::Parse {
                line: rows + 2 + extra_idx,
                message: "trailing data after the declared rows".into(),
            });
        }
    }
    DenseMatrix::from_row_major(rows, cols, &entries)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    matrix_from_string(&fs::read_to_string(path)?)
}

/// Write an observation set in the ratings-file convention (1-based ids,
/// level centers as ratings, zero timestamps).
pub fn observations_to_string(obs: &ObservedMatrix) -> String {
    let mut out = String::new();
    for o in obs.iter() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t0",
            o.row + 1,
            o.col + 1,
            obs.center_of(o)
        );
    }
    out
}

pub fn save_observations(path: impl AsRef<Path>, obs: &ObservedMatrix) -> Result<()> {
    fs::write(path, observations_to_string(obs))?;
    Ok(())
}

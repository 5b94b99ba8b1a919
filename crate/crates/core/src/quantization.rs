//! Quantization measurement model.
//!
//! Observed matrix entries are reported as one of a finite set of uniformly
//! spaced level centers. A value quantized to level center `m` is known to
//! lie inside the symmetric cell `[m - g/2, m + g/2]`, where `g` is the gap
//! between consecutive centers. The observation set Ω records which matrix
//! positions were reported and at which level.

use crate::error::{QmcError, Result};
use crate::matrix::DenseMatrix;

const UNIFORM_SPACING_REL_TOL: f64 = 1e-12;

/// Uniformly spaced quantization levels with gap `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationScheme {
    level_values: Vec<f64>,
    gap: f64,
}

impl QuantizationScheme {
    /// Build a scheme from explicit level centers. Centers must be strictly
    /// increasing with constant spacing (to 1e-12 relative).
    pub fn new(level_values: Vec<f64>) -> Result<Self> {
        if level_values.len() < 2 {
            return Err(QmcError::InvalidScheme(format!(
                "need at least 2 levels, got {}",
                level_values.len()
            )));
        }
        if level_values.iter().any(|v| !v.is_finite()) {
            return Err(QmcError::InvalidScheme("non-finite level center".into()));
        }
        let gap = level_values[1] - level_values[0];
        if gap <= 0.0 {
            return Err(QmcError::InvalidScheme(
                "level centers must be strictly increasing".into(),
            ));
        }
        for pair in level_values.windows(2) {
            let step = pair[1] - pair[0];
            if (step - gap).abs() > UNIFORM_SPACING_REL_TOL * gap.abs().max(1.0) {
                return Err(QmcError::InvalidScheme(format!(
                    "non-uniform spacing: {} vs gap {}",
                    step, gap
                )));
            }
        }
        Ok(Self { level_values, gap })
    }

    /// `count` levels starting at `first`, spaced by `gap`.
    pub fn uniform(count: usize, first: f64, gap: f64) -> Result<Self> {
        if count < 2 {
            return Err(QmcError::InvalidScheme(format!(
                "need at least 2 levels, got {count}"
            )));
        }
        if !gap.is_finite() || gap <= 0.0 {
            return Err(QmcError::InvalidScheme(format!("gap must be positive, got {gap}")));
        }
        let levels = (0..count).map(|k| first + gap * k as f64).collect();
        Self::new(levels)
    }

    pub fn num_levels(&self) -> usize {
        self.level_values.len()
    }

    pub fn gap(&self) -> f64 {
        self.gap
    }

    pub fn level_values(&self) -> &[f64] {
        &self.level_values
    }

    /// Center value of a level.
    pub fn center(&self, level_index: usize) -> Result<f64> {
        self.level_values
            .get(level_index)
            .copied()
            .ok_or_else(|| {
                QmcError::IndexOutOfRange(format!(
                    "level {} of {}",
                    level_index,
                    self.level_values.len()
                ))
            })
    }

    /// Lower and upper cell bounds `(m - g/2, m + g/2)` of a level.
    pub fn bounds_of(&self, level_index: usize) -> Result<(f64, f64)> {
        let m = self.center(level_index)?;
        let half = self.gap / 2.0;
        Ok((m - half, m + half))
    }

    /// Index of the level a value quantizes to. Values past the extreme
    /// levels clamp to the nearest extreme; exact midpoints round toward
    /// the higher level.
    pub fn quantize(&self, value: f64) -> Result<usize> {
        if !value.is_finite() {
            return Err(QmcError::Domain(format!("cannot quantize {value}")));
        }
        let offset = (value - self.level_values[0]) / self.gap;
        // floor(x + 1/2) sends exact midpoints up
        let idx = (offset + 0.5).floor();
        let max = (self.level_values.len() - 1) as f64;
        Ok(idx.clamp(0.0, max) as usize)
    }
}

/// One observed entry: position and reported level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub row: usize,
    pub col: usize,
    pub level: usize,
}

/// Partially observed quantized matrix: shape, observation set Ω and the
/// quantization scheme the levels refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedMatrix {
    rows: usize,
    cols: usize,
    observations: Vec<Observation>,
    scheme: QuantizationScheme,
}

impl ObservedMatrix {
    /// Validates index ranges, level ranges and rejects duplicate (row, col)
    /// positions. Observations are stored sorted by (row, col).
    pub fn new(
        rows: usize,
        cols: usize,
        observations: Vec<(usize, usize, usize)>,
        scheme: QuantizationScheme,
    ) -> Result<Self> {
        let mut obs: Vec<Observation> = observations
            .into_iter()
            .map(|(row, col, level)| Observation { row, col, level })
            .collect();
        for o in &obs {
            if o.row >= rows || o.col >= cols {
                return Err(QmcError::IndexOutOfRange(format!(
                    "observation at ({}, {}) outside {}x{}",
                    o.row, o.col, rows, cols
                )));
            }
            if o.level >= scheme.num_levels() {
                return Err(QmcError::IndexOutOfRange(format!(
                    "level {} of {}",
                    o.level,
                    scheme.num_levels()
                )));
            }
        }
        obs.sort_by_key(|o| (o.row, o.col));
        for pair in obs.windows(2) {
            if pair[0].row == pair[1].row && pair[0].col == pair[1].col {
                return Err(QmcError::Validation(format!(
                    "duplicate observation at ({}, {})",
                    pair[0].row, pair[0].col
                )));
            }
        }
        Ok(Self {
            rows,
            cols,
            observations: obs,
            scheme,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// |Ω|.
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Observation> {
        self.observations.iter()
    }

    pub fn scheme(&self) -> &QuantizationScheme {
        &self.scheme
    }

    /// Level center of one observation.
    pub fn center_of(&self, obs: &Observation) -> f64 {
        self.scheme.level_values()[obs.level]
    }

    /// Dense matrix with level centers at observed positions, zero elsewhere.
    pub fn center_matrix(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.rows, self.cols);
        for o in &self.observations {
            m.set(o.row, o.col, self.center_of(o))
                .expect("level centers are finite");
        }
        m
    }

    pub(crate) fn check_shape(&self, x: &DenseMatrix) -> Result<()> {
        if x.rows() != self.rows || x.cols() != self.cols {
            return Err(QmcError::DimensionMismatch(format!(
                "matrix {}x{} vs observations {}x{}",
                x.rows(),
                x.cols(),
                self.rows,
                self.cols
            )));
        }
        Ok(())
    }
}

/// Number of observed entries of `x` lying outside their quantization cell
/// `[m - g/2, m + g/2]` (closed interval).
pub fn violation_count(x: &DenseMatrix, obs: &ObservedMatrix) -> Result<usize> {
    obs.check_shape(x)?;
    let mut count = 0;
    for o in obs.iter() {
        let (lo, hi) = obs.scheme().bounds_of(o.level)?;
        let v = x.get(o.row, o.col);
        if v < lo || v > hi {
            count += 1;
        }
    }
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn five_levels() -> QuantizationScheme {
        QuantizationScheme::uniform(5, 1.0, 1.0).unwrap()
    }

    #[test]
    fn bounds_at_extreme_levels() {
        let s = five_levels();
        assert_eq!(s.bounds_of(0).unwrap(), (0.5, 1.5));
        assert_eq!(s.bounds_of(4).unwrap(), (4.5, 5.5));
        assert!(s.bounds_of(5).is_err());
    }

    #[test]
    fn bounds_with_wider_gap() {
        let s = QuantizationScheme::new(vec![0.0, 2.0]).unwrap();
        assert_eq!(s.gap(), 2.0);
        assert_eq!(s.bounds_of(1).unwrap(), (1.0, 3.0));
    }

    #[test]
    fn adjacent_cells_share_a_boundary() {
        let s = five_levels();
        for k in 0..4 {
            let (_, hi) = s.bounds_of(k).unwrap();
            let (lo, _) = s.bounds_of(k + 1).unwrap();
            assert_eq!(hi, lo);
        }
    }

    #[test]
    fn quantize_nearest_clamp_and_ties() {
        let s = five_levels();
        assert_eq!(s.quantize(3.2).unwrap(), 2);
        assert_eq!(s.quantize(0.1).unwrap(), 0); // below the lowest cell
        assert_eq!(s.quantize(2.5).unwrap(), 2); // midpoint goes up
        assert_eq!(s.quantize(9.0).unwrap(), 4); // above the highest cell
        assert!(s.quantize(f64::NAN).is_err());
    }

    #[test]
    fn quantize_round_trips_all_centers() {
        let s = QuantizationScheme::uniform(7, -2.5, 0.25).unwrap();
        for (k, &m) in s.level_values().iter().enumerate() {
            assert_eq!(s.quantize(m).unwrap(), k);
        }
    }

    #[test]
    fn scheme_rejects_bad_levels() {
        assert!(QuantizationScheme::new(vec![1.0]).is_err());
        assert!(QuantizationScheme::new(vec![1.0, 1.0]).is_err());
        assert!(QuantizationScheme::new(vec![1.0, 2.0, 3.5]).is_err());
        assert!(QuantizationScheme::uniform(3, 0.0, -1.0).is_err());
    }

    #[test]
    fn observed_matrix_validation() {
        let s = five_levels();
        assert!(ObservedMatrix::new(2, 2, vec![(2, 0, 1)], s.clone()).is_err());
        assert!(ObservedMatrix::new(2, 2, vec![(0, 0, 5)], s.clone()).is_err());
        assert!(ObservedMatrix::new(2, 2, vec![(0, 0, 1), (0, 0, 2)], s.clone()).is_err());
        let obs = ObservedMatrix::new(2, 2, vec![(1, 1, 4), (0, 0, 0)], s).unwrap();
        assert_eq!(obs.len(), 2);
        // stored sorted by position
        assert_eq!(obs.iter().next().unwrap().row, 0);
    }

    #[test]
    fn violations_counted_on_closed_cells() {
        let s = five_levels();
        let obs = ObservedMatrix::new(
            2,
            2,
            vec![(0, 0, 2), (0, 1, 0), (1, 0, 4)],
            s,
        )
        .unwrap();

        // exactly at centers
        let x = obs.center_matrix();
        assert_eq!(violation_count(&x, &obs).unwrap(), 0);

        // one entry a full gap above its center
        let mut x2 = obs.center_matrix();
        x2.set(0, 0, 3.0 + 1.0).unwrap();
        assert_eq!(violation_count(&x2, &obs).unwrap(), 1);

        // entries at the exact cell bounds are feasible
        let mut x3 = obs.center_matrix();
        x3.set(0, 0, 3.5).unwrap();
        x3.set(0, 1, 0.5).unwrap();
        x3.set(1, 0, 5.5).unwrap();
        assert_eq!(violation_count(&x3, &obs).unwrap(), 0);

        let wrong = DenseMatrix::zeros(3, 3);
        assert!(violation_count(&wrong, &obs).is_err());
    }
}

//! Finite-state continuous-time Markov chains.
//!
//! States are the unit vectors `e_1..e_N` of `R^N` (index `0..N` in code).
//! The rate matrix uses the **column convention**: column `i` of `A` is the
//! drift of `X` while the chain sits in state `i`, so `A[(j, i)]` is the jump
//! rate `i -> j` and every column sums to zero. With this convention
//!
//! ```text
//! X_t = X_0 + ∫_0^t A_u X_{u-} du + M_t
//! ```
//!
//! and marginal laws evolve as `dμ/dt = A μ`. Many references use the
//! transposed (row) convention; matrices from those sources must be
//! transposed before use.
//!
//! Time dependence is restricted to piecewise-constant generators, which
//! keeps transition matrices and path sampling exact.

mod expm;
mod law;
mod path;

pub use expm::expm;
pub use law::{evolve_law, uniform_grid, StateLawPath};
pub use path::{sample_path, sample_path_from_law, sample_path_with_rng, ChainPath};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance on generator column sums.
pub const COLUMN_SUM_TOL: f64 = 1e-12;

/// Simplex tolerance for user-supplied probability vectors.
pub const SIMPLEX_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("generator needs at least 2 states, got {0}")]
    TooFewStates(usize),
    #[error("segment {segment} is {rows}x{cols}, expected a square {expected}x{expected} matrix")]
    NotSquare {
        segment: usize,
        rows: usize,
        cols: usize,
        expected: usize,
    },
    // Indices are stored 0-based and displayed 1-based.
    #[error("column {} of segment {} sums to {sum:e}, expected 0", .column + 1, .segment + 1)]
    ColumnSumNonzero {
        segment: usize,
        column: usize,
        sum: f64,
    },
    #[error("negative off-diagonal rate {value} at ({}, {}) of segment {}", .row + 1, .column + 1, .segment + 1)]
    NegativeOffDiagonal {
        segment: usize,
        row: usize,
        column: usize,
        value: f64,
    },
    #[error("non-finite rate in segment {}", .segment + 1)]
    NonFiniteRate { segment: usize },
    #[error("bad segment times: {0}")]
    BadSegmentTimes(String),
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("state index {state} out of range for {n} states")]
    StateOutOfRange { state: usize, n: usize },
    #[error("dimension mismatch: expected length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("start time {s} is after end time {t}")]
    ReversedInterval { s: f64, t: f64 },
    #[error("probability vector off the simplex: {0}")]
    OffSimplex(String),
    #[error("bad time grid: {0}")]
    BadGrid(String),
}

/// One constant piece of a piecewise-constant rate matrix, active on
/// `[start, next start)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub rates: DMatrix<f64>,
}

/// A validated piecewise-constant rate matrix on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    n: usize,
    horizon: f64,
    segments: Vec<Segment>,
}

/// Validate raw `(start time, matrix)` segments into a [`Generator`].
pub fn validate_generator(
    raw: Vec<(f64, DMatrix<f64>)>,
    horizon: f64,
) -> Result<Generator, ChainError> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(ChainError::BadHorizon(horizon));
    }
    let Some((_, first)) = raw.first() else {
        return Err(ChainError::BadSegmentTimes("no segments".into()));
    };
    let n = first.nrows();
    if n < 2 {
        return Err(ChainError::TooFewStates(n));
    }
    let mut prev_start = f64::NEG_INFINITY;
    for (k, (start, a)) in raw.iter().enumerate() {
        if a.nrows() != n || a.ncols() != n {
            return Err(ChainError::NotSquare {
                segment: k,
                rows: a.nrows(),
                cols: a.ncols(),
                expected: n,
            });
        }
        if k == 0 && *start != 0.0 {
            return Err(ChainError::BadSegmentTimes(format!(
                "first segment must start at 0, got {start}"
            )));
        }
        if !(start.is_finite() && *start > prev_start && *start < horizon) {
            return Err(ChainError::BadSegmentTimes(format!(
                "segment {} starts at {start}; starts must be strictly increasing and below T={horizon}",
                k + 1
            )));
        }
        prev_start = *start;
        if a.iter().any(|v| !v.is_finite()) {
            return Err(ChainError::NonFiniteRate { segment: k });
        }
        for col in 0..n {
            for row in 0..n {
                if row != col && a[(row, col)] < 0.0 {
                    return Err(ChainError::NegativeOffDiagonal {
                        segment: k,
                        row,
                        column: col,
                        value: a[(row, col)],
                    });
                }
            }
            let sum: f64 = a.column(col).sum();
            if sum.abs() > COLUMN_SUM_TOL {
                return Err(ChainError::ColumnSumNonzero {
                    segment: k,
                    column: col,
                    sum,
                });
            }
        }
    }
    let segments = raw
        .into_iter()
        .map(|(start, rates)| Segment { start, rates })
        .collect();
    Ok(Generator {
        n,
        horizon,
        segments,
    })
}

impl Generator {
    /// Time-homogeneous generator on `[0, horizon]`.
    pub fn constant(rates: DMatrix<f64>, horizon: f64) -> Result<Self, ChainError> {
        validate_generator(vec![(0.0, rates)], horizon)
    }

    /// Build from row-major nested rows.
    pub fn from_rows(rows: &[Vec<f64>], horizon: f64) -> Result<Self, ChainError> {
        Self::constant(matrix_from_rows(rows)?, horizon)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Index of the segment active at `t` (right-continuous at boundaries).
    pub fn segment_index(&self, t: f64) -> usize {
        self.segments
            .partition_point(|s| s.start <= t)
            .saturating_sub(1)
    }

    /// End of segment `k` (the next start, or `T`).
    pub fn segment_end(&self, k: usize) -> f64 {
        self.segments
            .get(k + 1)
            .map_or(self.horizon, |s| s.start)
    }

    pub fn rates_at(&self, t: f64) -> &DMatrix<f64> {
        &self.segments[self.segment_index(t)].rates
    }

    /// Segment start times strictly inside `(0, T)`.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.segments.iter().skip(1).map(|s| s.start).collect()
    }

    pub fn check_state(&self, state: usize) -> Result<(), ChainError> {
        if state < self.n {
            Ok(())
        } else {
            Err(ChainError::StateOutOfRange { state, n: self.n })
        }
    }

    fn check_time(&self, t: f64) -> Result<(), ChainError> {
        if (0.0..=self.horizon).contains(&t) {
            Ok(())
        } else {
            Err(ChainError::TimeOutOfRange {
                t,
                horizon: self.horizon,
            })
        }
    }

    /// Same rates on a new horizon. Segments starting at or after the new
    /// horizon are dropped.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self, ChainError> {
        let raw = self
            .segments
            .iter()
            .filter(|s| s.start < horizon)
            .map(|s| (s.start, s.rates.clone()))
            .collect();
        validate_generator(raw, horizon)
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ChainError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(ChainError::DimensionMismatch {
            expected: ncols,
            got: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

/// `Φ = diag(A e_i) - diag(e_i) Aᵀ - A diag(e_i)` for a single rate matrix.
pub fn phi_from_rates(rates: &DMatrix<f64>, state: usize) -> DMatrix<f64> {
    let n = rates.nrows();
    let x = DVector::from_fn(n, |k, _| if k == state { 1.0 } else { 0.0 });
    let ax = rates * &x;
    let dx = DMatrix::from_diagonal(&x);
    DMatrix::from_diagonal(&ax) - &dx * rates.transpose() - rates * &dx
}

/// Density of the predictable quadratic variation of `M` at time `t` when
/// the chain's left limit is `state`.
pub fn phi(gen: &Generator, t: f64, state: usize) -> Result<DMatrix<f64>, ChainError> {
    gen.check_time(t)?;
    gen.check_state(state)?;
    Ok(phi_from_rates(gen.rates_at(t), state))
}

/// `z Φ zᵀ` evaluated as `Σ_{j≠i} A_ji (z_j - z_i)²`, which is the same
/// quadratic form but never negative.
pub fn seminorm_sq_from_rates(rates: &DMatrix<f64>, z: &[f64], state: usize) -> f64 {
    let zi = z[state];
    let col = rates.column(state);
    z.iter()
        .enumerate()
        .filter(|&(j, _)| j != state)
        .map(|(j, &zj)| col[j] * (zj - zi) * (zj - zi))
        .sum()
}

/// Squared stochastic seminorm `‖z‖²_{X_{t-}}` with `X_{t-} = e_state`.
pub fn seminorm_sq(
    z: &[f64],
    gen: &Generator,
    t: f64,
    state: usize,
) -> Result<f64, ChainError> {
    if z.len() != gen.n {
        return Err(ChainError::DimensionMismatch {
            expected: gen.n,
            got: z.len(),
        });
    }
    gen.check_time(t)?;
    gen.check_state(state)?;
    Ok(seminorm_sq_from_rates(gen.rates_at(t), z, state))
}

/// Column-stochastic `P(s, t)` with `E[X_t | X_s = e_i] = P e_i`.
pub fn transition_matrix(gen: &Generator, s: f64, t: f64) -> Result<DMatrix<f64>, ChainError> {
    if s > t {
        return Err(ChainError::ReversedInterval { s, t });
    }
    gen.check_time(s)?;
    gen.check_time(t)?;
    let mut p = DMatrix::identity(gen.n, gen.n);
    let mut cursor = s;
    let mut k = gen.segment_index(s);
    while cursor < t {
        let end = gen.segment_end(k).min(t);
        if end > cursor {
            let step = expm(&(&gen.segments[k].rates * (end - cursor)));
            p = step * p;
        }
        cursor = end;
        k += 1;
    }
    clean_stochastic(&mut p);
    Ok(p)
}

/// Clamp round-off negatives produced by the exponential.
pub(crate) fn clean_stochastic(p: &mut DMatrix<f64>) {
    for v in p.iter_mut() {
        if *v < 0.0 && *v > -1e-12 {
            *v = 0.0;
        }
    }
}

/// Solve `A μ = 0` on the simplex (stationary law of a constant generator).
pub fn stationary_law(rates: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = rates.nrows();
    let mut m = rates.clone();
    for c in 0..n {
        m[(n - 1, c)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    m.lu().solve(&rhs)
}

// JSON form: matrices as row-major nested arrays.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub t_start: f64,
    pub rates: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub horizon: f64,
    pub segments: Vec<SegmentSpec>,
}

impl TryFrom<GeneratorSpec> for Generator {
    type Error = ChainError;

    fn try_from(spec: GeneratorSpec) -> Result<Self, ChainError> {
        let raw = spec
            .segments
            .iter()
            .map(|s| Ok((s.t_start, matrix_from_rows(&s.rates)?)))
            .collect::<Result<Vec<_>, ChainError>>()?;
        validate_generator(raw, spec.horizon)
    }
}

impl From<&Generator> for GeneratorSpec {
    fn from(gen: &Generator) -> Self {
        GeneratorSpec {
            horizon: gen.horizon,
            segments: gen
                .segments
                .iter()
                .map(|s| SegmentSpec {
                    t_start: s.start,
                    rates: matrix_to_rows(&s.rates),
                })
                .collect(),
        }
    }
}

impl Serialize for Generator {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        GeneratorSpec::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Generator {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let spec = GeneratorSpec::deserialize(deserializer)?;
        Generator::try_from(spec).map_err(serde::de::Error::custom)
    }
}

/// Check a probability vector against the simplex within `tol`.
pub fn check_simplex(mu: &[f64], tol: f64) -> Result<(), ChainError> {
    if let Some((k, v)) = mu
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < -tol)
    {
        return Err(ChainError::OffSimplex(format!("entry {k} is {v}")));
    }
    let sum: f64 = mu.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(ChainError::OffSimplex(format!("entries sum to {sum}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn sym2() -> Generator {
        Generator::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]], 1.0).unwrap()
    }

    #[test]
    fn validates_symmetric_and_absorbing() {
        assert!(Generator::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]], 1.0).is_ok());
        assert!(Generator::from_rows(&[vec![-1.0, 0.0], vec![1.0, 0.0]], 1.0).is_ok());
        let zero = Generator::constant(DMatrix::zeros(3, 3), 2.0);
        assert!(zero.is_ok());
    }

    #[test]
    fn rejects_bad_column_sum() {
        let err = Generator::from_rows(&[vec![-1.0, 1.0], vec![2.0, -1.0]], 1.0).unwrap_err();
        assert_eq!(
            err,
            ChainError::ColumnSumNonzero {
                segment: 0,
                column: 0,
                sum: 1.0
            }
        );
        assert!(err.to_string().contains("column 1 of segment 1"));
    }

    #[test]
    fn rejects_negative_rates_and_bad_times() {
        let a = matrix_from_rows(&[vec![1.0, 1.0], vec![-1.0, -1.0]]).unwrap();
        assert!(matches!(
            Generator::constant(a, 1.0),
            Err(ChainError::NegativeOffDiagonal { row: 1, column: 0, .. })
        ));
        let a = matrix_from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let bad = vec![(0.0, a.clone()), (0.0, a.clone())];
        assert!(matches!(
            validate_generator(bad, 1.0),
            Err(ChainError::BadSegmentTimes(_))
        ));
        let late = vec![(0.0, a.clone()), (1.5, a.clone())];
        assert!(matches!(
            validate_generator(late, 1.0),
            Err(ChainError::BadSegmentTimes(_))
        ));
        assert!(matches!(
            validate_generator(vec![(0.1, a.clone())], 1.0),
            Err(ChainError::BadSegmentTimes(_))
        ));
        assert!(matches!(
            validate_generator(vec![(0.0, DMatrix::zeros(1, 1))], 1.0),
            Err(ChainError::TooFewStates(1))
        ));
        assert!(matches!(
            validate_generator(vec![(0.0, DMatrix::zeros(2, 3))], 1.0),
            Err(ChainError::NotSquare { .. })
        ));
    }

    #[test]
    fn phi_of_symmetric_chain() {
        let p = phi(&sym2(), 0.3, 0).unwrap();
        let expected = matrix_from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        assert!((p - expected).abs().max() < 1e-15);
    }

    #[test]
    fn phi_vanishes_in_absorbing_state() {
        let gen = Generator::from_rows(&[vec![-1.0, 0.0], vec![1.0, 0.0]], 1.0).unwrap();
        assert_eq!(phi(&gen, 0.0, 1).unwrap().abs().max(), 0.0);
    }

    #[test]
    fn phi_psd_on_fixed_four_state_generator() {
        let gen = Generator::from_rows(
            &[
                vec![-2.0, 0.5, 0.0, 1.0],
                vec![1.5, -1.0, 0.3, 0.0],
                vec![0.0, 0.2, -0.3, 2.0],
                vec![0.5, 0.3, 0.0, -3.0],
            ],
            1.0,
        )
        .unwrap();
        for s in 0..4 {
            let p = phi(&gen, 0.5, s).unwrap();
            let eig = SymmetricEigen::new(p.clone());
            assert!(eig.eigenvalues.min() >= -1e-10);
            let ones = DVector::from_element(4, 1.0);
            assert!((&p * ones).amax() < 1e-12);
        }
    }

    #[test]
    fn seminorm_examples() {
        let gen = sym2();
        assert_eq!(seminorm_sq(&[1.0, 0.0], &gen, 0.0, 0).unwrap(), 1.0);
        assert_eq!(seminorm_sq(&[1.0, 1.0], &gen, 0.0, 1).unwrap(), 0.0);
        assert_eq!(seminorm_sq(&[0.0, 0.0], &gen, 0.0, 0).unwrap(), 0.0);
        assert!(matches!(
            seminorm_sq(&[1.0], &gen, 0.0, 0),
            Err(ChainError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn seminorm_matches_quadratic_form() {
        let gen = Generator::from_rows(
            &[
                vec![-1.0, 2.0, 0.5],
                vec![0.4, -2.5, 0.5],
                vec![0.6, 0.5, -1.0],
            ],
            1.0,
        )
        .unwrap();
        let z = [0.3, -1.2, 2.0];
        for s in 0..3 {
            let p = phi(&gen, 0.0, s).unwrap();
            let zv = DVector::from_row_slice(&z);
            let quad = (zv.transpose() * p * &zv)[(0, 0)];
            let direct = seminorm_sq(&z, &gen, 0.0, s).unwrap();
            assert!((quad - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn transition_matrix_closed_form() {
        let gen = sym2();
        for &t in &[0.0, 0.1, 0.5, 1.0] {
            let p = transition_matrix(&gen, 0.0, t).unwrap();
            let e = (-2.0 * t).exp();
            let stay = 0.5 * (1.0 + e);
            let move_ = 0.5 * (1.0 - e);
            assert!((p[(0, 0)] - stay).abs() < 1e-14);
            assert!((p[(1, 0)] - move_).abs() < 1e-14);
            assert!((p[(0, 1)] - move_).abs() < 1e-14);
        }
        assert_eq!(
            transition_matrix(&gen, 0.4, 0.4).unwrap(),
            DMatrix::identity(2, 2)
        );
        assert!(matches!(
            transition_matrix(&gen, 0.5, 0.4),
            Err(ChainError::ReversedInterval { .. })
        ));
    }

    #[test]
    fn transition_matrix_crosses_segments() {
        let a1 = matrix_from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let a2 = matrix_from_rows(&[vec![-2.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let gen = validate_generator(vec![(0.0, a1.clone()), (0.5, a2.clone())], 1.0).unwrap();
        let p = transition_matrix(&gen, 0.25, 0.75).unwrap();
        let expected = expm(&(a2 * 0.25)) * expm(&(a1 * 0.25));
        assert!((p - expected).abs().max() < 1e-14);
    }

    #[test]
    fn stationary_law_solves() {
        let a = matrix_from_rows(&[vec![-1.0, 2.0], vec![1.0, -2.0]]).unwrap();
        let mu = stationary_law(&a).unwrap();
        assert!((mu[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((&a * mu).amax() < 1e-14);
    }

    #[test]
    fn generator_json_roundtrip() {
        let a1 = matrix_from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let a2 = matrix_from_rows(&[vec![-2.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let gen = validate_generator(vec![(0.0, a1), (0.5, a2)], 1.0).unwrap();
        let text = serde_json::to_string(&gen).unwrap();
        assert!(text.contains("\"rates\":[[-1.0,1.0],[1.0,-1.0]]"));
        let back: Generator = serde_json::from_str(&text).unwrap();
        assert_eq!(back, gen);
        let bad = text.replace("[[-2.0,0.0]", "[[-2.0,0.1]");
        assert!(serde_json::from_str::<Generator>(&bad).is_err());
    }

    #[test]
    fn segment_lookup() {
        let a = DMatrix::zeros(2, 2);
        let gen =
            validate_generator(vec![(0.0, a.clone()), (0.3, a.clone()), (0.6, a)], 1.0).unwrap();
        assert_eq!(gen.segment_index(0.0), 0);
        assert_eq!(gen.segment_index(0.3), 1);
        assert_eq!(gen.segment_index(0.59), 1);
        assert_eq!(gen.segment_index(1.0), 2);
        assert_eq!(gen.segment_end(1), 0.6);
        assert_eq!(gen.segment_end(2), 1.0);
        assert_eq!(gen.breakpoints(), vec![0.3, 0.6]);
    }
}

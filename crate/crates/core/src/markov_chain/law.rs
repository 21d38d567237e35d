use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{check_simplex, transition_matrix, ChainError, Generator, SIMPLEX_TOL};

/// Negative drift below this is clipped to zero; anything more negative is
/// reported as an error.
const CLIP_TOL: f64 = 1e-10;

/// Marginal laws of the chain on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateLawPath {
    pub grid: Vec<f64>,
    #[serde(with = "laws_serde")]
    pub laws: Vec<DVector<f64>>,
}

mod laws_serde {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(laws: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = laws.iter().map(|v| v.as_slice()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DVector<f64>>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Ok(rows.into_iter().map(DVector::from_vec).collect())
    }
}

impl StateLawPath {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Piecewise-linear interpolation in time.
    pub fn interpolate(&self, t: f64) -> DVector<f64> {
        let k = self
            .grid
            .partition_point(|&g| g <= t)
            .clamp(1, self.grid.len() - 1);
        let (t0, t1) = (self.grid[k - 1], self.grid[k]);
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        &self.laws[k - 1] * (1.0 - w) + &self.laws[k] * w
    }
}

/// `K + 1` equally spaced points on `[0, horizon]`, with the last point set
/// to `horizon` exactly.
pub fn uniform_grid(horizon: f64, steps: usize) -> Vec<f64> {
    let h = horizon / steps as f64;
    let mut grid: Vec<f64> = (0..=steps).map(|k| k as f64 * h).collect();
    grid[steps] = horizon;
    grid
}

pub(crate) fn check_grid(grid: &[f64], horizon: f64) -> Result<(), ChainError> {
    if grid.len() < 2 {
        return Err(ChainError::BadGrid("need at least two points".into()));
    }
    if grid[0] != 0.0 || grid[grid.len() - 1] != horizon {
        return Err(ChainError::BadGrid(format!(
            "grid must span [0, {horizon}], got [{}, {}]",
            grid[0],
            grid[grid.len() - 1]
        )));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(ChainError::BadGrid("grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Clip tiny negative drift and renormalize.
pub(crate) fn project_simplex(mu: &mut DVector<f64>) -> Result<(), ChainError> {
    for (k, v) in mu.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v < -CLIP_TOL {
                return Err(ChainError::OffSimplex(format!(
                    "entry {k} drifted to {v}"
                )));
            }
            *v = 0.0;
        }
    }
    let sum = mu.sum();
    *mu /= sum;
    Ok(())
}

/// Propagate `mu0` through the grid with exact per-interval transition
/// matrices: `μ(t_k) = P(0, t_k) μ0`.
pub fn evolve_law(
    gen: &Generator,
    mu0: &DVector<f64>,
    grid: &[f64],
) -> Result<StateLawPath, ChainError> {
    if mu0.len() != gen.n() {
        return Err(ChainError::DimensionMismatch {
            expected: gen.n(),
            got: mu0.len(),
        });
    }
    check_simplex(mu0.as_slice(), SIMPLEX_TOL)?;
    check_grid(grid, gen.horizon())?;
    let mut laws = Vec::with_capacity(grid.len());
    let mut mu = mu0.clone();
    project_simplex(&mut mu)?;
    laws.push(mu.clone());
    for w in grid.windows(2) {
        mu = transition_matrix(gen, w[0], w[1])? * mu;
        project_simplex(&mut mu)?;
        laws.push(mu.clone());
    }
    Ok(StateLawPath {
        grid: grid.to_vec(),
        laws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov_chain::{matrix_from_rows, stationary_law, validate_generator};
    use nalgebra::DMatrix;

    #[test]
    fn symmetric_chain_at_half_life() {
        let gen = Generator::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]], 1.0).unwrap();
        let t = 2f64.ln() / 2.0;
        let grid = [0.0, t, 1.0];
        let law = evolve_law(&gen, &DVector::from_vec(vec![1.0, 0.0]), &grid).unwrap();
        assert!((law.laws[1][0] - 0.75).abs() < 1e-14);
        assert!((law.laws[1][1] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn zero_generator_keeps_law() {
        let gen = Generator::constant(DMatrix::zeros(3, 3), 2.0).unwrap();
        let mu0 = DVector::from_vec(vec![0.2, 0.3, 0.5]);
        let law = evolve_law(&gen, &mu0, &uniform_grid(2.0, 10)).unwrap();
        for mu in &law.laws {
            assert!((mu - &mu0).amax() < 1e-15);
        }
    }

    #[test]
    fn stationary_start_stays_put() {
        let rows = [
            vec![-1.0, 0.5, 0.2],
            vec![0.7, -0.9, 0.3],
            vec![0.3, 0.4, -0.5],
        ];
        let a = matrix_from_rows(&rows).unwrap();
        let pi = stationary_law(&a).unwrap();
        let gen = Generator::constant(a, 3.0).unwrap();
        let law = evolve_law(&gen, &pi, &uniform_grid(3.0, 30)).unwrap();
        for mu in &law.laws {
            assert!((mu - &pi).amax() < 1e-8);
        }
    }

    #[test]
    fn matches_transition_matrix_on_piecewise_generator() {
        let a1 = matrix_from_rows(&[vec![-1.0, 2.0], vec![1.0, -2.0]]).unwrap();
        let a2 = matrix_from_rows(&[vec![-0.2, 0.0], vec![0.2, 0.0]]).unwrap();
        let gen = validate_generator(vec![(0.0, a1), (0.37, a2)], 1.0).unwrap();
        let mu0 = DVector::from_vec(vec![0.4, 0.6]);
        let grid = uniform_grid(1.0, 7);
        let law = evolve_law(&gen, &mu0, &grid).unwrap();
        for (t, mu) in grid.iter().zip(&law.laws) {
            let direct = transition_matrix(&gen, 0.0, *t).unwrap() * &mu0;
            assert!((mu - direct).amax() < 1e-12);
        }
    }

    #[test]
    fn rejects_off_simplex_and_bad_grids() {
        let gen = Generator::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]], 1.0).unwrap();
        let bad = DVector::from_vec(vec![0.7, 0.4]);
        assert!(matches!(
            evolve_law(&gen, &bad, &[0.0, 1.0]),
            Err(ChainError::OffSimplex(_))
        ));
        let mu = DVector::from_vec(vec![0.5, 0.5]);
        assert!(matches!(
            evolve_law(&gen, &mu, &[0.0, 0.5]),
            Err(ChainError::BadGrid(_))
        ));
        assert!(matches!(
            evolve_law(&gen, &mu, &[0.0, 0.6, 0.5, 1.0]),
            Err(ChainError::BadGrid(_))
        ));
    }

    #[test]
    fn interpolation_hits_nodes() {
        let gen = Generator::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]], 1.0).unwrap();
        let law = evolve_law(&gen, &DVector::from_vec(vec![1.0, 0.0]), &uniform_grid(1.0, 4))
            .unwrap();
        assert_eq!(law.interpolate(0.5), law.laws[2]);
        let mid = law.interpolate(0.125);
        assert!((mid - (&law.laws[0] + &law.laws[1]) * 0.5).amax() < 1e-15);
        assert_eq!(law.interpolate(1.0), law.laws[4]);
    }
}

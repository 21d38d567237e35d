//! Pathwise residual of the integral form
//!
//! ```text
//! R = ξ + ∫_0^T E'[f](s, X_s) ds - ∫_0^T Z_s dM_s - Y_0
//! ```
//!
//! along sampled chain paths. `Z` is the grid solution held constant on
//! each step, so `∫ (Z - u) dM` is a mean-zero martingale term and `E[R]`
//! only sees the ODE error. The driver integral uses a cubic in time per
//! cell, fitted through Hermite-interpolated values of `u` and the exact
//! law.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use rayon::prelude::*;
use serde::Serialize;

use super::driver::meanfield_all;
use super::solver::{rhs, Cell, Freezing};
use super::{BsdeError, MarkovianSolution, MeanFieldProblem};
use crate::markov_chain::{expm, sample_path_from_law};
use crate::martingale::{stochastic_integral_step, MartingalePath};
use crate::stats::{path_seed, Accumulator, Estimate};

/// Pathwise tolerance for problems whose solution is state-independent.
pub const DETERMINISTIC_TOL: f64 = 1e-8;

const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualOptions {
    pub n_paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualStats {
    pub residual: Estimate,
    /// `∫ Z dM` alone; mean zero by the martingale property.
    pub zdm: Estimate,
    pub max_abs: f64,
    /// `u` is state-independent, so `R` is deterministic.
    pub deterministic: bool,
    /// Allowance for the mean (discretization error budget).
    pub budget: f64,
}

impl ResidualStats {
    /// Deterministic problems: `max |R| <= 1e-8`. Otherwise the mean must
    /// be within 3 standard errors of zero and within the budget.
    pub fn passes(&self) -> bool {
        if self.deterministic {
            self.max_abs <= DETERMINISTIC_TOL
        } else {
            self.residual.z_score().abs() <= 3.0 && self.residual.mean.abs() <= self.budget
        }
    }
}

/// Per cell and state, monomial coefficients in `θ = (s - lo) / h`.
struct CellPoly {
    lo: f64,
    h: f64,
    coef: Vec<Vector4<f64>>,
}

impl CellPoly {
    fn integral(&self, state: usize, a: f64, b: f64) -> f64 {
        let c = &self.coef[state];
        let anti = |s: f64| {
            let x = (s - self.lo) / self.h;
            x * (c[0] + x * (c[1] / 2.0 + x * (c[2] / 3.0 + x * c[3] / 4.0)))
        };
        self.h * (anti(b) - anti(a))
    }
}

fn hermite(cell: &Cell, du_lo: &DVector<f64>, du_hi: &DVector<f64>, theta: f64) -> DVector<f64> {
    let h = cell.hi - cell.lo;
    let t2 = theta * theta;
    let t3 = t2 * theta;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + theta;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    &cell.u_lo * h00 + du_lo * (h10 * h) + &cell.u_hi * h01 + du_hi * (h11 * h)
}

fn cell_polys(sol: &MarkovianSolution, p: &MeanFieldProblem) -> Vec<CellPoly> {
    let n = p.n();
    let nodes: [f64; 4] = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
    let vinv = Matrix4::from_fn(|r, c| nodes[r].powi(c as i32))
        .try_inverse()
        .expect("distinct nodes");
    let mut scratch = vec![0.0; n];
    sol.cells
        .iter()
        .map(|cell| {
            let h = cell.hi - cell.lo;
            let rates: &DMatrix<f64> = &p.gen.segments()[cell.seg].rates;
            let du_lo = rhs(p, cell.seg, cell.lo, &cell.law_lo, &cell.u_lo, None, Freezing::default(), &mut scratch);
            let du_hi = rhs(p, cell.seg, cell.hi, &cell.law_hi, &cell.u_hi, None, Freezing::default(), &mut scratch);
            let mut values = DMatrix::zeros(4, n);
            for (r, &theta) in nodes.iter().enumerate() {
                let s = cell.lo + theta * h;
                let u = hermite(cell, &du_lo, &du_hi, theta);
                let law = if r == 0 {
                    cell.law_lo.clone()
                } else if r == 3 {
                    cell.law_hi.clone()
                } else {
                    expm(&(rates * (theta * h))) * &cell.law_lo
                };
                let us = u.as_slice();
                meanfield_all(&p.driver, rates, s, law.as_slice(), us, us, us, us, &mut scratch);
                for i in 0..n {
                    values[(r, i)] = scratch[i];
                }
            }
            let coef = (0..n)
                .map(|i| vinv * Vector4::from_fn(|r, _| values[(r, i)]))
                .collect();
            CellPoly { lo: cell.lo, h, coef }
        })
        .collect()
}

/// Sample `n_paths` paths (initial states drawn from `μ0`) and summarize
/// the residual. Deterministic in `seed` regardless of thread count.
pub fn residual_check(
    sol: &MarkovianSolution,
    p: &MeanFieldProblem,
    opts: &ResidualOptions,
) -> Result<ResidualStats, BsdeError> {
    let g = p.terminal_vector()?;
    let polys = cell_polys(sol, p);
    let cuts: Vec<f64> = polys.iter().map(|c| c.lo).collect();
    let rows = &sol.u[..sol.u.len() - 1];
    let u0 = &sol.u[0];
    let mu0 = &sol.law.laws[0];

    let one_path = |idx: usize| -> Result<(f64, f64), BsdeError> {
        let path = sample_path_from_law(&p.gen, mu0.as_slice(), path_seed(opts.seed, idx as u64))?;
        let x0 = path.x0;
        let mp = MartingalePath::new(&p.gen, path);
        let mut drift = 0.0;
        for piece in mp.pieces(&cuts) {
            if piece.end <= piece.start {
                continue;
            }
            let c = cuts.partition_point(|&lo| lo <= piece.start) - 1;
            drift += polys[c].integral(piece.state, piece.start, piece.end);
        }
        let zdm = stochastic_integral_step(&sol.grid, rows, &mp);
        let r = g[mp.path().final_state()] + drift - zdm - u0[x0];
        Ok((r, zdm))
    };

    let chunks: Vec<_> = (0..opts.n_paths.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut res = Accumulator::default();
            let mut zdm = Accumulator::default();
            let mut max_abs: f64 = 0.0;
            for idx in c * CHUNK..((c + 1) * CHUNK).min(opts.n_paths) {
                let (r, z) = one_path(idx)?;
                res.push(r);
                zdm.push(z);
                max_abs = max_abs.max(r.abs());
            }
            Ok::<_, BsdeError>((res, zdm, max_abs))
        })
        .collect::<Result<_, _>>()?;

    let mut res = Accumulator::default();
    let mut zdm = Accumulator::default();
    let mut max_abs: f64 = 0.0;
    for (r, z, m) in &chunks {
        res.merge(r);
        zdm.merge(z);
        max_abs = max_abs.max(*m);
    }
    let h = p.horizon() / sol.steps() as f64;
    Ok(ResidualStats {
        residual: res.estimate(),
        zdm: zdm.estimate(),
        max_abs,
        deterministic: sol.state_spread() <= 1e-10 * (1.0 + sol.sup_norm()),
        budget: 10.0 * h * h,
    })
}

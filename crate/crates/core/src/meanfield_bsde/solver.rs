//! Markovian reduction and backward RK4 integration.
//!
//! With `Y_t = u(t) · X_t` and `Z_t = u(t)` the equation becomes the
//! terminal-value ODE system
//!
//! ```text
//! du_i/dt = -(A(t)ᵀ u)_i - Σ_{i'} μ_t(i') f(t, i', u_{i'}, u, i, u_i, u),   u(T) = g
//! ```
//!
//! coupled to the forward law `dμ/dt = A(t) μ`. The law is propagated
//! exactly; the value vector is integrated by classical RK4 on a uniform
//! grid, with each step split at generator segment starts so the rates are
//! constant inside every substep.

use std::fmt::Write as _;

use nalgebra::DVector;

use super::driver::meanfield_all;
use super::{BsdeError, MeanFieldProblem};
use crate::markov_chain::{evolve_law, uniform_grid, StateLawPath};

/// One RK4 substep `[lo, hi]` with constant rates, plus the exact laws at
/// its endpoints and midpoint.
#[derive(Debug, Clone)]
pub(crate) struct Substep {
    pub lo: f64,
    pub hi: f64,
    pub seg: usize,
    /// Index `k` of the grid interval `[t_k, t_{k+1}]` containing it.
    pub interval: usize,
    pub law_lo: DVector<f64>,
    pub law_mid: DVector<f64>,
    pub law_hi: DVector<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct StepPlan {
    pub grid: Vec<f64>,
    /// Forward time order.
    pub substeps: Vec<Substep>,
    pub law: StateLawPath,
}

impl StepPlan {
    pub fn new(p: &MeanFieldProblem, steps: usize) -> Result<Self, BsdeError> {
        if steps < 2 {
            return Err(BsdeError::TooFewSteps(steps));
        }
        let horizon = p.horizon();
        let grid = uniform_grid(horizon, steps);
        let mut cuts: Vec<(f64, usize)> = grid
            .iter()
            .enumerate()
            .map(|(k, &t)| (t, k.min(steps - 1)))
            .collect();
        for b in p.gen.breakpoints() {
            let k = grid.partition_point(|&g| g <= b) - 1;
            if grid[k] != b {
                cuts.push((b, k));
            }
        }
        cuts.sort_by(|a, b| a.0.total_cmp(&b.0));

        // Forward pass on the refined grid: cuts and substep midpoints.
        let mut fine = Vec::with_capacity(2 * cuts.len());
        for w in cuts.windows(2) {
            fine.push(w[0].0);
            fine.push(0.5 * (w[0].0 + w[1].0));
        }
        fine.push(horizon);
        let fine_law = evolve_law(&p.gen, &p.mu0, &fine)?;

        let substeps = cuts
            .windows(2)
            .enumerate()
            .map(|(s, w)| Substep {
                lo: w[0].0,
                hi: w[1].0,
                seg: p.gen.segment_index(w[0].0),
                interval: w[0].1,
                law_lo: fine_law.laws[2 * s].clone(),
                law_mid: fine_law.laws[2 * s + 1].clone(),
                law_hi: fine_law.laws[2 * s + 2].clone(),
            })
            .collect::<Vec<_>>();

        let mut laws = Vec::with_capacity(grid.len());
        for sub in &substeps {
            if sub.lo == grid[sub.interval] {
                laws.push(sub.law_lo.clone());
            }
        }
        laws.push(fine_law.laws.last().unwrap().clone());
        debug_assert_eq!(laws.len(), grid.len());
        Ok(Self {
            law: StateLawPath {
                grid: grid.clone(),
                laws,
            },
            grid,
            substeps,
        })
    }
}

/// Which driver arguments read the frozen previous iterate instead of the
/// value being integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub(crate) struct Freezing {
    pub yp: bool,
    pub zp: bool,
    pub y: bool,
    pub z: bool,
}

/// RK4 stage states per substep (forward order), stages ordered
/// `hi, mid, mid, lo`.
pub(crate) type StageField = Vec<[DVector<f64>; 4]>;

/// Value vector at the endpoints of one substep.
#[derive(Debug, Clone)]
pub(crate) struct Cell {
    pub lo: f64,
    pub hi: f64,
    pub seg: usize,
    pub u_lo: DVector<f64>,
    pub u_hi: DVector<f64>,
    pub law_lo: DVector<f64>,
    pub law_hi: DVector<f64>,
}

pub(crate) struct Run {
    pub u: Vec<DVector<f64>>,
    pub stages: StageField,
    pub cells: Vec<Cell>,
}

/// Right-hand side `du/dt` at time `t` for stage state `cur`, with frozen
/// arguments taken from `frozen`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn rhs(
    p: &MeanFieldProblem,
    seg: usize,
    t: f64,
    law: &DVector<f64>,
    cur: &DVector<f64>,
    frozen: Option<&DVector<f64>>,
    freeze: Freezing,
    scratch: &mut [f64],
) -> DVector<f64> {
    let rates = &p.gen.segments()[seg].rates;
    let pick = |flag: bool| -> &[f64] {
        match (flag, frozen) {
            (true, Some(v)) => v.as_slice(),
            _ => cur.as_slice(),
        }
    };
    meanfield_all(
        &p.driver,
        rates,
        t,
        law.as_slice(),
        pick(freeze.yp),
        pick(freeze.zp),
        pick(freeze.y),
        pick(freeze.z),
        scratch,
    );
    let mut out = -(rates.tr_mul(cur));
    for (o, f) in out.iter_mut().zip(scratch.iter()) {
        *o -= f;
    }
    out
}

/// Backward RK4 from `u(T) = g` over the plan.
pub(crate) fn integrate(
    plan: &StepPlan,
    p: &MeanFieldProblem,
    g: &DVector<f64>,
    freeze: Freezing,
    frozen: Option<&StageField>,
) -> Result<Run, BsdeError> {
    let n = p.n();
    let steps = plan.grid.len() - 1;
    let mut u_grid = vec![DVector::zeros(n); steps + 1];
    u_grid[steps] = g.clone();
    let mut stages: StageField = vec![
        [
            DVector::zeros(n),
            DVector::zeros(n),
            DVector::zeros(n),
            DVector::zeros(n)
        ];
        plan.substeps.len()
    ];
    let mut cells = Vec::with_capacity(plan.substeps.len());
    let mut scratch = vec![0.0; n];
    let mut u = g.clone();

    for (s, sub) in plan.substeps.iter().enumerate().rev() {
        let h = sub.hi - sub.lo;
        let mid = 0.5 * (sub.lo + sub.hi);
        let fz = |k: usize| frozen.map(|f| &f[s][k]);
        let mut f = |t, law, cur: &DVector<f64>, k| {
            rhs(p, sub.seg, t, law, cur, fz(k), freeze, &mut scratch)
        };
        let u1 = u.clone();
        let k1 = f(sub.hi, &sub.law_hi, &u1, 0);
        let u2 = &u1 - &k1 * (0.5 * h);
        let k2 = f(mid, &sub.law_mid, &u2, 1);
        let u3 = &u1 - &k2 * (0.5 * h);
        let k3 = f(mid, &sub.law_mid, &u3, 2);
        let u4 = &u1 - &k3 * h;
        let k4 = f(sub.lo, &sub.law_lo, &u4, 3);
        let next = &u1 - (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(BsdeError::NonFiniteValue { t: sub.lo });
        }
        cells.push(Cell {
            lo: sub.lo,
            hi: sub.hi,
            seg: sub.seg,
            u_lo: next.clone(),
            u_hi: u1.clone(),
            law_lo: sub.law_lo.clone(),
            law_hi: sub.law_hi.clone(),
        });
        stages[s] = [u1, u2, u3, u4];
        u = next;
        if sub.lo == plan.grid[sub.interval] {
            u_grid[sub.interval] = u.clone();
        }
    }
    cells.reverse();
    Ok(Run {
        u: u_grid,
        stages,
        cells,
    })
}

/// Grid solution `Y_t = u(t) · X_t`, `Z_t = u(t)`.
#[derive(Debug, Clone)]
pub struct MarkovianSolution {
    pub grid: Vec<f64>,
    pub u: Vec<DVector<f64>>,
    pub law: StateLawPath,
    /// Canonical `Z` on the grid. `Z` is only identified up to the kernel of
    /// the seminorm, so comparisons should go through the seminorm.
    pub z_representative: Vec<DVector<f64>>,
    pub(crate) cells: Vec<Cell>,
}

impl MarkovianSolution {
    pub(crate) fn from_run(plan: &StepPlan, run: Run) -> Self {
        Self {
            grid: plan.grid.clone(),
            z_representative: run.u.clone(),
            u: run.u,
            law: plan.law.clone(),
            cells: run.cells,
        }
    }

    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.u[0]
    }

    /// `E[Y_0] = u(0) · μ0`.
    pub fn initial_mean(&self) -> f64 {
        self.u[0].dot(&self.law.laws[0])
    }

    /// `max_k max_i |u_k - other_k|` on a shared grid.
    pub fn sup_distance(&self, other: &MarkovianSolution) -> f64 {
        assert_eq!(self.grid.len(), other.grid.len(), "grids differ");
        self.u
            .iter()
            .zip(&other.u)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }

    /// Largest spread `max_i u_i - min_i u_i` over the grid. Zero means the
    /// solution is deterministic (`Z` lies in the seminorm kernel).
    pub fn state_spread(&self) -> f64 {
        self.u
            .iter()
            .map(|v| v.max() - v.min())
            .fold(0.0, f64::max)
    }

    /// `exp((2C+1)T)(|g|_∞ + T max|f(t,·,0,0,·,0,0)|)`, evaluated on the grid.
    pub fn a_priori_bound(&self, p: &MeanFieldProblem) -> f64 {
        let n = p.n();
        let zeros = vec![0.0; n];
        let mut f0: f64 = 0.0;
        for &t in &self.grid {
            for i in 0..n {
                for ip in 0..n {
                    let pt = super::DriverPoint {
                        t,
                        ip,
                        yp: 0.0,
                        zp: &zeros,
                        zp_norm: 0.0,
                        i,
                        y: 0.0,
                        z: &zeros,
                        z_norm: 0.0,
                    };
                    f0 = f0.max(p.driver.eval(&pt).abs());
                }
            }
        }
        let c = p.driver.lipschitz();
        let horizon = p.horizon();
        ((2.0 * c + 1.0) * horizon).exp() * (p.xi.bound() + horizon * f0)
    }

    pub fn sup_norm(&self) -> f64 {
        self.u.iter().map(|v| v.amax()).fold(0.0, f64::max)
    }

    /// CSV with header `t,state,u,mu`; states are 0-based.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,state,u,mu\n");
        for (k, t) in self.grid.iter().enumerate() {
            for i in 0..self.u[k].len() {
                let _ = writeln!(out, "{t},{i},{},{}", self.u[k][i], self.law.laws[k][i]);
            }
        }
        out
    }
}

/// Solve by forward law propagation and backward RK4 with `steps` uniform
/// steps.
pub fn solve_markovian(p: &MeanFieldProblem, steps: usize) -> Result<MarkovianSolution, BsdeError> {
    let g = p.terminal_vector()?;
    let plan = StepPlan::new(p, steps)?;
    let run = integrate(&plan, p, g, Freezing::default(), None)?;
    Ok(MarkovianSolution::from_run(&plan, run))
}

/// Advisory refinement check: solve with `steps` and `steps / 2` and report
/// [`BsdeError::GridTooCoarse`] if `u(0)` moves by more than `10 * tol`.
pub fn check_grid(p: &MeanFieldProblem, steps: usize, tol: f64) -> Result<f64, BsdeError> {
    let fine = solve_markovian(p, steps)?;
    let coarse = solve_markovian(p, (steps / 2).max(2))?;
    let change = (fine.initial() - coarse.initial()).amax();
    if change > 10.0 * tol {
        Err(BsdeError::GridTooCoarse {
            steps,
            change,
            threshold: 10.0 * tol,
        })
    } else {
        Ok(change)
    }
}

//! Picard iteration in the two flavours used for existence: freeze the
//! value arguments `(y', z', y)` and solve for the next iterate (Y-scheme),
//! or freeze only `z'` (Z'-scheme).
//!
//! Each outer step is a backward RK4 solve in which the frozen arguments
//! read the previous iterate at the same RK stages. At the fixed point this
//! is exactly the direct solver.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::solver::{integrate, Freezing, StageField, StepPlan};
use super::{BsdeError, MarkovianSolution, MeanFieldProblem};
use crate::markov_chain::seminorm_sq_from_rates;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Freeze `y'`, `z'` and `y`; iterate from `Y^0 = 0`.
    Y,
    /// Freeze `z'` only; iterate from `Z^0 = 0` by default.
    ZPrime,
}

impl Variant {
    fn freezing(self) -> Freezing {
        match self {
            Variant::Y => Freezing {
                yp: true,
                zp: true,
                y: true,
                z: false,
            },
            Variant::ZPrime => Freezing {
                zp: true,
                ..Freezing::default()
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Y => "y",
            Variant::ZPrime => "zprime",
        }
    }
}

/// Initial iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PicardStart {
    Zero,
    /// Independent uniform entries in `[-bound, bound]` at every RK stage.
    Random { seed: u64, bound: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardOptions {
    pub variant: Variant,
    pub max_iter: usize,
    pub tol: f64,
    pub start: PicardStart,
    /// Keep every iterate in the outcome.
    pub keep_iterates: bool,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            variant: Variant::Y,
            max_iter: 60,
            tol: 1e-9,
            start: PicardStart::Zero,
            keep_iterates: false,
        }
    }
}

impl PicardOptions {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }
}

/// Gaps between iterate `iter` and its predecessor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardStep {
    pub iter: usize,
    /// `max_k |u^n_k - u^{n-1}_k|_∞`.
    pub u_gap: f64,
    /// Grid `L²` gap of the `z` seminorm under the law,
    /// `sqrt(Σ_k w_k Σ_i μ_k(i) ‖Δu_k‖²_i)` with trapezoid weights.
    pub z_gap: f64,
    /// `Σ_k w_k Σ_i μ_k(i) |Δu_k(i)|²`, i.e. `E∫|ΔY|² dt` on the grid.
    pub l2_sq_gap: f64,
    /// `(u_gap + z_gap)` over the previous one; NaN for the first step.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardDiagnostics {
    pub variant: Variant,
    pub tol: f64,
    pub iterations: Vec<PicardStep>,
    pub converged: bool,
}

impl PicardDiagnostics {
    pub fn final_gap(&self) -> Option<f64> {
        self.iterations.last().map(|s| s.u_gap + s.z_gap)
    }

    /// `(c e^c)^n / n!` for `n = 0..len`, with `c = max(6C², 1)`.
    pub fn factorial_bound(&self, lipschitz: f64) -> Vec<f64> {
        let c = (6.0 * lipschitz * lipschitz).max(1.0);
        let q = c * c.exp();
        let mut term = 1.0;
        (0..self.iterations.len())
            .map(|n| {
                if n > 0 {
                    term *= q / n as f64;
                }
                term
            })
            .collect()
    }

    /// Whether every `E∫|ΔY|²` gap is at most the factorial sequence
    /// scaled to the first gap.
    pub fn dominated_by_factorial_bound(&self, lipschitz: f64) -> bool {
        let Some(first) = self.iterations.first() else {
            return true;
        };
        let w1 = first.l2_sq_gap;
        self.factorial_bound(lipschitz)
            .iter()
            .zip(&self.iterations)
            .all(|(b, s)| s.l2_sq_gap <= b * w1 * (1.0 + 1e-12) + 1e-300)
    }

    /// Gaps nonincreasing from the second iteration on, up to `slack`.
    pub fn monotone_after_second(&self, slack: f64) -> bool {
        self.iterations
            .iter()
            .skip(1)
            .map(|s| s.u_gap + s.z_gap)
            .collect::<Vec<_>>()
            .windows(2)
            .all(|w| w[1] <= w[0] + slack)
    }

    /// CSV with header `iter,u_gap,z_gap,ratio`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,u_gap,z_gap,ratio\n");
        for s in &self.iterations {
            let _ = writeln!(out, "{},{:e},{:e},{}", s.iter, s.u_gap, s.z_gap, s.ratio);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    /// Last iterate.
    pub solution: MarkovianSolution,
    pub diagnostics: PicardDiagnostics,
    /// All iterates `1..=n` when requested.
    pub iterates: Vec<MarkovianSolution>,
}

fn start_field(plan: &StepPlan, n: usize, start: PicardStart) -> StageField {
    let zero = || DVector::zeros(n);
    match start {
        PicardStart::Zero => vec![[zero(), zero(), zero(), zero()]; plan.substeps.len()],
        PicardStart::Random { seed, bound } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = || DVector::from_fn(n, |_, _| rng.gen_range(-bound..=bound));
            (0..plan.substeps.len())
                .map(|_| [draw(), draw(), draw(), draw()])
                .collect()
        }
    }
}

/// Grid values carried by a stage field: the `lo` stage of the first
/// substep of each interval, and the `hi` stage of the last substep.
fn field_grid(plan: &StepPlan, field: &StageField) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(plan.grid.len());
    for (s, sub) in plan.substeps.iter().enumerate() {
        if sub.lo == plan.grid[sub.interval] {
            out.push(field[s][3].clone());
        }
    }
    out.push(field.last().unwrap()[0].clone());
    out
}

fn gaps(p: &MeanFieldProblem, plan: &StepPlan, a: &[DVector<f64>], b: &[DVector<f64>]) -> (f64, f64, f64) {
    let steps = plan.grid.len() - 1;
    let h = p.horizon() / steps as f64;
    let mut u_gap: f64 = 0.0;
    let (mut z_sq, mut y_sq) = (0.0, 0.0);
    for (k, &t) in plan.grid.iter().enumerate() {
        let d = &a[k] - &b[k];
        u_gap = u_gap.max(d.amax());
        let w = if k == 0 || k == steps { 0.5 * h } else { h };
        let rates = p.gen.rates_at(t);
        let law = &plan.law.laws[k];
        for i in 0..d.len() {
            if law[i] > 0.0 {
                z_sq += w * law[i] * seminorm_sq_from_rates(rates, d.as_slice(), i);
                y_sq += w * law[i] * d[i] * d[i];
            }
        }
    }
    (u_gap, z_sq.sqrt(), y_sq)
}

/// Run the chosen Picard scheme with `steps` uniform steps.
///
/// Stops once `u_gap + z_gap <= tol`. A run that exhausts `max_iter`
/// returns [`BsdeError::MaxIterExceeded`] carrying the last iterate and its
/// diagnostics.
pub fn picard_solve(
    p: &MeanFieldProblem,
    steps: usize,
    opts: &PicardOptions,
) -> Result<PicardOutcome, BsdeError> {
    let g = p.terminal_vector()?;
    let plan = StepPlan::new(p, steps)?;
    let freeze = opts.variant.freezing();
    let mut field = start_field(&plan, p.n(), opts.start);
    let mut prev_grid = field_grid(&plan, &field);
    let mut diagnostics = PicardDiagnostics {
        variant: opts.variant,
        tol: opts.tol,
        iterations: Vec::new(),
        converged: false,
    };
    let mut iterates = Vec::new();
    let mut prev_gap = f64::NAN;
    let mut last = None;

    for iter in 1..=opts.max_iter.max(1) {
        let run = integrate(&plan, p, g, freeze, Some(&field))?;
        let (u_gap, z_gap, l2_sq_gap) = gaps(p, &plan, &run.u, &prev_grid);
        let gap = u_gap + z_gap;
        diagnostics.iterations.push(PicardStep {
            iter,
            u_gap,
            z_gap,
            l2_sq_gap,
            ratio: gap / prev_gap,
        });
        prev_gap = gap;
        prev_grid = run.u.clone();
        field = run.stages.clone();
        let sol = MarkovianSolution::from_run(&plan, run);
        if opts.keep_iterates {
            iterates.push(sol.clone());
        }
        last = Some(sol);
        if gap <= opts.tol {
            diagnostics.converged = true;
            break;
        }
    }

    let outcome = PicardOutcome {
        solution: last.expect("at least one iteration"),
        diagnostics,
        iterates,
    };
    if outcome.diagnostics.converged {
        Ok(outcome)
    } else {
        Err(BsdeError::MaxIterExceeded(Box::new(outcome)))
    }
}

//! Mean-field BSDEs on a finite-state chain: drivers, problem instances,
//! the direct Markovian solver, the two Picard schemes, pathwise residual
//! checks and the comparison harness.

mod compare;
mod driver;
mod picard;
mod problem;
mod residual;
mod solver;

use thiserror::Error;

use crate::markov_chain::ChainError;

pub use compare::{
    compare_solutions, ComparisonVerdict, Hypothesis, HypothesisReport, COMPARISON_TOL,
    DOMINANCE_SLACK,
};
pub use driver::{
    lipschitz_spot_check, meanfield_expectation, Driver, DriverPoint, SpotCheck,
};
pub use picard::{
    picard_solve, PicardDiagnostics, PicardOptions, PicardOutcome, PicardStart, PicardStep,
    Variant,
};
pub use problem::{MeanFieldProblem, TerminalCondition};
pub use residual::{residual_check, ResidualOptions, ResidualStats, DETERMINISTIC_TOL};
pub use solver::{check_grid, solve_markovian, MarkovianSolution};

#[derive(Debug, Error)]
pub enum BsdeError {
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("terminal condition is a path functional; the Markovian solvers need a vector")]
    NotMarkovian,
    #[error("{what} has length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("need at least 2 time steps, got {0}")]
    TooFewSteps(usize),
    #[error("non-finite value near t = {t}")]
    NonFiniteValue { t: f64 },
    #[error("grid too coarse: halving {steps} steps moves u(0) by {change:e} (> {threshold:e})")]
    GridTooCoarse {
        steps: usize,
        change: f64,
        threshold: f64,
    },
    #[error("Picard iteration did not reach tol after {} iterations", .0.diagnostics.iterations.len())]
    MaxIterExceeded(Box<PicardOutcome>),
    #[error("comparison hypothesis violated: {0}")]
    HypothesisViolated(Box<HypothesisReport>),
    #[error("problems are not comparable: {0}")]
    IncompatibleProblems(String),
}

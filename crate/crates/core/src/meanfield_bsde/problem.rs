use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use super::{BsdeError, Driver};
use crate::markov_chain::{check_simplex, ChainPath, Generator, SIMPLEX_TOL};

type PathFn = dyn Fn(&ChainPath) -> f64 + Send + Sync;

/// Terminal value `ξ`.
#[derive(Clone)]
pub enum TerminalCondition {
    /// `ξ = g · X_T`.
    Markovian(DVector<f64>),
    /// A bounded functional of the whole path. Only the oracles accept it.
    PathFunctional { func: Arc<PathFn>, bound: f64 },
}

impl fmt::Debug for TerminalCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Markovian(g) => f.debug_tuple("Markovian").field(&g.as_slice()).finish(),
            Self::PathFunctional { bound, .. } => f
                .debug_struct("PathFunctional")
                .field("bound", bound)
                .finish_non_exhaustive(),
        }
    }
}

impl TerminalCondition {
    pub fn markovian(g: Vec<f64>) -> Self {
        Self::Markovian(DVector::from_vec(g))
    }

    pub fn vector(&self) -> Option<&DVector<f64>> {
        match self {
            Self::Markovian(g) => Some(g),
            Self::PathFunctional { .. } => None,
        }
    }

    /// Bound on `|ξ|`.
    pub fn bound(&self) -> f64 {
        match self {
            Self::Markovian(g) => g.amax(),
            Self::PathFunctional { bound, .. } => *bound,
        }
    }

    pub fn evaluate(&self, path: &ChainPath) -> f64 {
        match self {
            Self::Markovian(g) => g[path.final_state()],
            Self::PathFunctional { func, .. } => func(path),
        }
    }
}

/// A full mean-field BSDE instance; the horizon is the generator's.
#[derive(Debug, Clone)]
pub struct MeanFieldProblem {
    pub gen: Generator,
    pub mu0: DVector<f64>,
    pub xi: TerminalCondition,
    pub driver: Driver,
}

impl MeanFieldProblem {
    pub fn new(
        gen: Generator,
        mu0: DVector<f64>,
        xi: TerminalCondition,
        driver: Driver,
    ) -> Result<Self, BsdeError> {
        let n = gen.n();
        if mu0.len() != n {
            return Err(BsdeError::DimensionMismatch {
                what: "initial law",
                expected: n,
                got: mu0.len(),
            });
        }
        check_simplex(mu0.as_slice(), SIMPLEX_TOL)?;
        if let TerminalCondition::Markovian(g) = &xi {
            if g.len() != n {
                return Err(BsdeError::DimensionMismatch {
                    what: "terminal vector",
                    expected: n,
                    got: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(BsdeError::NonFiniteValue { t: gen.horizon() });
            }
        }
        Ok(Self {
            gen,
            mu0,
            xi,
            driver,
        })
    }

    pub fn n(&self) -> usize {
        self.gen.n()
    }

    pub fn horizon(&self) -> f64 {
        self.gen.horizon()
    }

    pub fn terminal_vector(&self) -> Result<&DVector<f64>, BsdeError> {
        self.xi.vector().ok_or(BsdeError::NotMarkovian)
    }

    /// Same problem with another driver.
    pub fn with_driver(&self, driver: Driver) -> Self {
        Self {
            driver,
            ..self.clone()
        }
    }

    /// Same problem with another terminal vector.
    pub fn with_terminal(&self, g: Vec<f64>) -> Self {
        Self {
            xi: TerminalCondition::markovian(g),
            ..self.clone()
        }
    }
}

//! Independent references: closed-form solutions and a brute-force
//! discrete-time tree solver.

mod closed_form;
mod tree;

use thiserror::Error;

use crate::markov_chain::ChainError;
use crate::meanfield_bsde::BsdeError;

pub use closed_form::{closed_form, ClosedForm, ClosedFormParams, FORMS};
pub use tree::{
    tree_solve, tree_solve_with, DiscreteProblem, DiscreteTerminal, TreeMode, TreeSolution,
    MAX_TREE_PATHS,
};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("tree with {states}^{steps} paths exceeds the limit of {limit}")]
    TreeTooLarge {
        states: usize,
        steps: usize,
        limit: u64,
    },
    #[error("unknown closed form {0:?} (expected zero_driver, pure_meanfield_exp or linear_decay)")]
    UnknownForm(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Bsde(#[from] BsdeError),
}

//! Mean-field backward stochastic differential equations driven by a
//! finite-state continuous-time Markov chain.
//!
//! The crate is organised around the objects of the equation
//!
//! ```text
//! Y_t = ξ + ∫_t^T E'[f(s, Y'_s, Z'_s, Y_s, Z_s)] ds - ∫_t^T Z_s dM_s
//! ```
//!
//! * [`markov_chain`]: generators, the quadratic-variation density Φ and its
//!   seminorm, transition matrices, marginal laws and exact path sampling.
//! * [`martingale`]: the compensated chain `M`, stochastic integrals and
//!   quadratic variations along sampled paths.
//! * [`meanfield_bsde`]: drivers, problems, the Markovian solver and the two
//!   Picard schemes, pathwise residual checks and the comparison harness.
//! * [`oracles`]: closed forms and a brute-force discrete-time tree solver.
//! * [`dsl`] and [`harness`]: the driver expression language and the
//!   experiment runner behind the `mfbsde` CLI.

pub mod dsl;
pub mod harness;
pub mod markov_chain;
pub mod martingale;
pub mod meanfield_bsde;
pub mod oracles;
pub mod problems;
pub mod stats;

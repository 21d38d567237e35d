//! Explicit discrete-time scheme solved by exhaustive backward induction:
//!
//! ```text
//! Y_k = E[Y_{k+1} | F_k] + Δ E'[f](t_k, Y'_k, Z'_k, Y_k, Z_k)
//! ```
//!
//! with the driver evaluated at `E[Y_{k+1} | F_k]` and `Z_k` obtained by
//! regressing `Y_{k+1} - E[Y_{k+1} | F_k]` on `X_{k+1} - E[X_{k+1} | F_k]`.
//!
//! Markovian terminal values recombine, so the tree collapses to an
//! `N`-node lattice per step. Path functionals enumerate every state
//! sequence.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::OracleError;
use crate::markov_chain::{seminorm_sq_from_rates, transition_matrix, uniform_grid, ChainPath};
use crate::meanfield_bsde::{Driver, DriverPoint, MeanFieldProblem, TerminalCondition};

/// Cap on `N^K` for path enumeration.
pub const MAX_TREE_PATHS: u64 = 10_000_000;

/// Singular values below this are treated as zero in the `Z` regression.
const PINV_CUTOFF: f64 = 1e-10;

type SequenceFn = dyn Fn(&[usize]) -> f64 + Send + Sync;

/// Terminal value of the discrete problem.
#[derive(Clone)]
pub enum DiscreteTerminal {
    Markovian(DVector<f64>),
    /// Functional of the state sequence `x_0, ..., x_K`.
    Sequence { func: Arc<SequenceFn>, bound: f64 },
}

impl std::fmt::Debug for DiscreteTerminal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Markovian(g) => f.debug_tuple("Markovian").field(&g.as_slice()).finish(),
            Self::Sequence { bound, .. } => f
                .debug_struct("Sequence")
                .field("bound", bound)
                .finish_non_exhaustive(),
        }
    }
}

/// `K`-step discretization of a mean-field problem.
#[derive(Debug, Clone)]
pub struct DiscreteProblem {
    pub n: usize,
    pub steps: usize,
    pub delta: f64,
    pub times: Vec<f64>,
    /// `P_k = P(t_k, t_{k+1})`, column-stochastic.
    pub transitions: Vec<DMatrix<f64>>,
    /// Rates active at `t_k`, used for the seminorms inside the driver.
    pub rates: Vec<DMatrix<f64>>,
    pub mu0: DVector<f64>,
    pub driver: Driver,
    pub xi: DiscreteTerminal,
}

impl DiscreteProblem {
    /// Discretize with `steps` equal steps. A continuous-time path
    /// functional is evaluated on the path that jumps at the grid times.
    pub fn from_problem(p: &MeanFieldProblem, steps: usize) -> Result<Self, OracleError> {
        if steps == 0 {
            return Err(OracleError::InvalidParams("need at least one step".into()));
        }
        let times = uniform_grid(p.horizon(), steps);
        let transitions = times
            .windows(2)
            .map(|w| transition_matrix(&p.gen, w[0], w[1]))
            .collect::<Result<Vec<_>, _>>()?;
        let rates = times[..steps]
            .iter()
            .map(|&t| p.gen.rates_at(t).clone())
            .collect();
        let xi = match &p.xi {
            TerminalCondition::Markovian(g) => DiscreteTerminal::Markovian(g.clone()),
            TerminalCondition::PathFunctional { func, bound } => {
                let func = func.clone();
                let grid = times.clone();
                DiscreteTerminal::Sequence {
                    func: Arc::new(move |xs: &[usize]| func(&sequence_path(&grid, xs))),
                    bound: *bound,
                }
            }
        };
        Ok(Self {
            n: p.n(),
            steps,
            delta: p.horizon() / steps as f64,
            times,
            transitions,
            rates,
            mu0: p.mu0.clone(),
            driver: p.driver.clone(),
            xi,
        })
    }

    /// Same problem with a sequence terminal value.
    pub fn with_sequence_terminal<F>(&self, bound: f64, func: F) -> Self
    where
        F: Fn(&[usize]) -> f64 + Send + Sync + 'static,
    {
        Self {
            xi: DiscreteTerminal::Sequence {
                func: Arc::new(func),
                bound,
            },
            ..self.clone()
        }
    }

    /// Discrete marginal laws `μ_{k+1} = P_k μ_k`.
    pub fn laws(&self) -> Vec<DVector<f64>> {
        let mut out = vec![self.mu0.clone()];
        for p in &self.transitions {
            let next = p * out.last().unwrap();
            out.push(next);
        }
        out
    }
}

/// Path that jumps exactly at the grid times.
fn sequence_path(grid: &[f64], xs: &[usize]) -> ChainPath {
    let events = xs
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] != w[1])
        .map(|(k, w)| (grid[k + 1], w[1]))
        .collect();
    ChainPath {
        x0: xs[0],
        events,
        horizon: *grid.last().unwrap(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeMode {
    /// One node per state and step; Markovian terminal values only.
    Lattice,
    /// One node per state sequence.
    Paths,
}

#[derive(Debug, Clone)]
pub struct TreeSolution {
    pub mode: TreeMode,
    pub times: Vec<f64>,
    /// `Y_0` for each starting state.
    pub y0: DVector<f64>,
    /// `Y_k` on every node of level `k`. Lattice nodes are states; path
    /// nodes are sequences `x_0..x_k` in base-`N` order, `x_0` most
    /// significant.
    pub levels: Vec<Vec<f64>>,
    /// Discrete marginal law at each step, obtained by summing node
    /// probabilities.
    pub laws: Vec<DVector<f64>>,
}

impl TreeSolution {
    /// `E[Y_0] = Σ_i μ0(i) Y_0(i)`.
    pub fn initial_mean(&self) -> f64 {
        self.y0.dot(&self.laws[0])
    }

    /// Lattice solutions in the `t,state,u,mu` schema; path solutions only
    /// report `t = 0`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,state,u,mu\n");
        let rows = match self.mode {
            TreeMode::Lattice => self.levels.len(),
            TreeMode::Paths => 1,
        };
        for k in 0..rows {
            for (i, &mu) in self.laws[k].iter().enumerate() {
                let u = if k == 0 { self.y0[i] } else { self.levels[k][i] };
                let _ = writeln!(out, "{},{i},{u},{mu}", self.times[k]);
            }
        }
        out
    }
}

/// Solve in lattice mode for Markovian terminal values and by path
/// enumeration otherwise.
pub fn tree_solve(dp: &DiscreteProblem) -> Result<TreeSolution, OracleError> {
    let mode = match dp.xi {
        DiscreteTerminal::Markovian(_) => TreeMode::Lattice,
        DiscreteTerminal::Sequence { .. } => TreeMode::Paths,
    };
    tree_solve_with(dp, mode)
}

/// Solve with an explicit mode. Path mode enforces `N^K <= 10^7`.
pub fn tree_solve_with(dp: &DiscreteProblem, mode: TreeMode) -> Result<TreeSolution, OracleError> {
    let n = dp.n;
    let k_steps = dp.steps;
    let regressors = Regressors::new(dp)?;
    match (mode, &dp.xi) {
        (TreeMode::Lattice, DiscreteTerminal::Markovian(g)) => {
            let laws = dp.laws();
            let mut levels = vec![Vec::new(); k_steps + 1];
            levels[k_steps] = g.as_slice().to_vec();
            for k in (0..k_steps).rev() {
                let nodes: Vec<Node> = (0..n)
                    .map(|i| regressors.node(k, i, &levels[k + 1]))
                    .collect();
                levels[k] = backward_level(dp, k, &nodes, laws[k].as_slice());
            }
            Ok(TreeSolution {
                mode,
                times: dp.times.clone(),
                y0: DVector::from_vec(levels[0].clone()),
                levels,
                laws,
            })
        }
        (TreeMode::Lattice, DiscreteTerminal::Sequence { .. }) => Err(OracleError::InvalidParams(
            "lattice mode needs a Markovian terminal value".into(),
        )),
        (TreeMode::Paths, xi) => {
            let paths = (n as u64).checked_pow(k_steps as u32);
            if paths.is_none_or(|p| p > MAX_TREE_PATHS) {
                return Err(OracleError::TreeTooLarge {
                    states: n,
                    steps: k_steps,
                    limit: MAX_TREE_PATHS,
                });
            }
            // Node probabilities level by level.
            let mut probs = vec![dp.mu0.as_slice().to_vec()];
            for k in 0..k_steps {
                let p = &dp.transitions[k];
                let next: Vec<f64> = probs[k]
                    .iter()
                    .enumerate()
                    .flat_map(|(idx, &w)| (0..n).map(move |j| w * p[(j, idx % n)]))
                    .collect();
                probs.push(next);
            }
            let laws: Vec<DVector<f64>> = probs
                .iter()
                .map(|level| {
                    let mut mu = DVector::zeros(n);
                    for (idx, &w) in level.iter().enumerate() {
                        mu[idx % n] += w;
                    }
                    mu
                })
                .collect();

            let leaves = probs[k_steps].len();
            let terminal: Vec<f64> = (0..leaves)
                .into_par_iter()
                .map(|idx| match xi {
                    DiscreteTerminal::Markovian(g) => g[idx % n],
                    DiscreteTerminal::Sequence { func, .. } => {
                        let mut xs = vec![0; k_steps + 1];
                        let mut r = idx;
                        for x in xs.iter_mut().rev() {
                            *x = r % n;
                            r /= n;
                        }
                        func(&xs)
                    }
                })
                .collect();
            let mut levels = vec![Vec::new(); k_steps + 1];
            levels[k_steps] = terminal;
            for k in (0..k_steps).rev() {
                let children = &levels[k + 1];
                let nodes: Vec<Node> = (0..probs[k].len())
                    .into_par_iter()
                    .map(|idx| regressors.node(k, idx % n, &children[idx * n..(idx + 1) * n]))
                    .collect();
                levels[k] = backward_level(dp, k, &nodes, &probs[k]);
            }
            Ok(TreeSolution {
                mode,
                times: dp.times.clone(),
                y0: DVector::from_vec(levels[0].clone()),
                levels,
                laws,
            })
        }
    }
}

/// Conditional mean and regression coefficient at one node.
struct Node {
    state: usize,
    mean: f64,
    z: DVector<f64>,
}

/// Pseudo-inverse of `Cov(X_{k+1} | X_k = i) = diag(p) - p pᵀ` per `(k, i)`.
struct Regressors<'a> {
    dp: &'a DiscreteProblem,
    pinv: Vec<Vec<DMatrix<f64>>>,
}

impl<'a> Regressors<'a> {
    fn new(dp: &'a DiscreteProblem) -> Result<Self, OracleError> {
        let pinv = dp
            .transitions
            .iter()
            .map(|p| {
                (0..dp.n)
                    .map(|i| {
                        let col = p.column(i);
                        let cov = DMatrix::from_diagonal(&col) - col * col.transpose();
                        cov.pseudo_inverse(PINV_CUTOFF)
                            .map_err(|e| OracleError::InvalidParams(e.to_string()))
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { dp, pinv })
    }

    /// `children[j]` is `Y_{k+1}` after a move to state `j`.
    fn node(&self, k: usize, state: usize, children: &[f64]) -> Node {
        let p = self.dp.transitions[k].column(state);
        let mean: f64 = p.iter().zip(children).map(|(w, y)| w * y).sum();
        // Σ_j p_j (Y_j - m)(e_j - p)
        let mut b = DVector::zeros(self.dp.n);
        for j in 0..self.dp.n {
            let r = p[j] * (children[j] - mean);
            b[j] += r;
            b -= p * r;
        }
        Node {
            state,
            mean,
            z: &self.pinv[k][state] * b,
        }
    }
}

/// `Y_k = m + Δ E'[f]` for every node, with the primed copy distributed as
/// the nodes weighted by `weights`.
fn backward_level(dp: &DiscreteProblem, k: usize, nodes: &[Node], weights: &[f64]) -> Vec<f64> {
    let t = dp.times[k];
    let rates = &dp.rates[k];
    // Collapse nodes with identical (state, mean, z) into weighted atoms.
    let mut index: HashMap<(usize, u64, Vec<u64>), usize> = HashMap::new();
    let mut atoms: Vec<(usize, f64, &DVector<f64>, f64, f64)> = Vec::new();
    let mut atom_of = Vec::with_capacity(nodes.len());
    for (node, &w) in nodes.iter().zip(weights) {
        let key = (
            node.state,
            node.mean.to_bits(),
            node.z.iter().map(|v| v.to_bits()).collect(),
        );
        let a = *index.entry(key).or_insert_with(|| {
            let norm = seminorm_sq_from_rates(rates, node.z.as_slice(), node.state).sqrt();
            atoms.push((node.state, node.mean, &node.z, norm, 0.0));
            atoms.len() - 1
        });
        atoms[a].4 += w;
        atom_of.push(a);
    }
    let values: Vec<f64> = atoms
        .par_iter()
        .map(|&(i, y, z, z_norm, _)| {
            let ef: f64 = atoms
                .iter()
                .filter(|a| a.4 > 0.0)
                .map(|&(ip, yp, zp, zp_norm, w)| {
                    let pt = DriverPoint {
                        t,
                        ip,
                        yp,
                        zp: zp.as_slice(),
                        zp_norm,
                        i,
                        y,
                        z: z.as_slice(),
                        z_norm,
                    };
                    w * dp.driver.eval(&pt)
                })
                .sum();
            y + dp.delta * ef
        })
        .collect();
    atom_of.into_iter().map(|a| values[a]).collect()
}

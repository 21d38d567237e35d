//! The compensated chain `M_t = X_t - X_0 - ∫_0^t A_u X_{u-} du` along a
//! sampled path, stochastic integrals against it, and its optional and
//! predictable quadratic variations.
//!
//! Everything between jumps is evaluated exactly or by adaptive quadrature
//! per inter-jump interval. No time grid is involved. Integrands always see
//! the pre-jump state `X_{s-}`.

use nalgebra::{DMatrix, DVector};

use rayon::prelude::*;

use crate::markov_chain::{phi_from_rates, sample_path_from_law, ChainError, ChainPath, Generator};
use crate::stats::{path_seed, Accumulator, Estimate};

/// Absolute tolerance for the adaptive time integrals.
pub const QUADRATURE_TOL: f64 = 1e-10;

/// A chain path together with the generator that drives its compensator.
#[derive(Debug, Clone)]
pub struct MartingalePath<'g> {
    gen: &'g Generator,
    path: ChainPath,
}

/// A maximal interval on which both the state and the rate matrix are
/// constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub start: f64,
    pub end: f64,
    pub state: usize,
    pub segment: usize,
}

fn unit(n: usize, i: usize) -> DVector<f64> {
    DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 })
}

impl<'g> MartingalePath<'g> {
    pub fn new(gen: &'g Generator, path: ChainPath) -> Self {
        Self { gen, path }
    }

    pub fn path(&self) -> &ChainPath {
        &self.path
    }

    pub fn generator(&self) -> &Generator {
        self.gen
    }

    /// Partition of `[0, T]` at jumps, segment starts and the extra
    /// `breakpoints`.
    pub fn pieces(&self, breakpoints: &[f64]) -> Vec<Piece> {
        let horizon = self.path.horizon;
        let mut cuts: Vec<f64> = self
            .gen
            .breakpoints()
            .into_iter()
            .chain(self.path.events.iter().map(|e| e.0))
            .chain(breakpoints.iter().copied())
            .filter(|&t| t > 0.0 && t < horizon)
            .collect();
        cuts.push(horizon);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();

        let mut pieces = Vec::with_capacity(cuts.len());
        let mut start = 0.0;
        let mut state = self.path.x0;
        let mut events = self.path.events.iter().peekable();
        for end in cuts {
            pieces.push(Piece {
                start,
                end,
                state,
                segment: self.gen.segment_index(start),
            });
            while let Some(&&(t, s)) = events.peek() {
                if t <= end {
                    state = s;
                    events.next();
                } else {
                    break;
                }
            }
            start = end;
        }
        pieces
    }

    fn compensator(&self, t: f64) -> DVector<f64> {
        let mut acc = DVector::zeros(self.gen.n());
        for p in self.pieces(&[t]) {
            if p.start >= t {
                break;
            }
            let rates = &self.gen.segments()[p.segment].rates;
            acc += rates.column(p.state) * (p.end.min(t) - p.start);
        }
        acc
    }
}

/// `M_t = X_t - X_0 - ∫_0^t A_u X_{u-} du`.
pub fn martingale_value(mp: &MartingalePath<'_>, t: f64) -> DVector<f64> {
    let n = mp.gen.n();
    let t = t.clamp(0.0, mp.path.horizon);
    unit(n, mp.path.state_at(t)) - unit(n, mp.path.x0) - mp.compensator(t)
}

/// `∫_0^T z(s, X_{s-}) dM_s` for an integrand `z(s, state) -> R^N`.
///
/// Jump part is summed exactly; the compensator part is integrated by
/// double-exponential quadrature on every piece between consecutive jumps,
/// segment starts and `breakpoints` (put the discontinuities of `z` there).
pub fn stochastic_integral<F>(z: F, mp: &MartingalePath<'_>, breakpoints: &[f64]) -> f64
where
    F: Fn(f64, usize) -> DVector<f64>,
{
    let jumps: f64 = mp
        .path
        .jumps()
        .map(|(t, from, to)| {
            let row = z(t, from);
            row[to] - row[from]
        })
        .sum();
    let mut drift = 0.0;
    for p in mp.pieces(breakpoints) {
        if p.end <= p.start {
            continue;
        }
        let col = mp.gen.segments()[p.segment].rates.column(p.state).into_owned();
        let integrand = |s: f64| z(s, p.state).dot(&col);
        drift += quadrature::integrate(integrand, p.start, p.end, QUADRATURE_TOL).integral;
    }
    jumps - drift
}

/// `∫_0^T z dM` for an integrand that is constant on each grid interval:
/// `z(s) = rows[k]` for `s ∈ (grid[k], grid[k+1]]`, independent of the
/// state. Exact.
pub fn stochastic_integral_step(
    grid: &[f64],
    rows: &[DVector<f64>],
    mp: &MartingalePath<'_>,
) -> f64 {
    let interval = |t: f64| {
        grid.partition_point(|&g| g < t)
            .saturating_sub(1)
            .min(rows.len() - 1)
    };
    let jumps: f64 = mp
        .path
        .jumps()
        .map(|(t, from, to)| {
            let row = &rows[interval(t)];
            row[to] - row[from]
        })
        .sum();
    let mut drift = 0.0;
    for p in mp.pieces(grid) {
        if p.end <= p.start {
            continue;
        }
        let col = mp.gen.segments()[p.segment].rates.column(p.state);
        let k = interval(0.5 * (p.start + p.end));
        drift += rows[k].dot(&col) * (p.end - p.start);
    }
    jumps - drift
}

/// Optional quadratic variation `[M, M]_T = Σ ΔM ΔMᵀ`.
pub fn realized_qv(mp: &MartingalePath<'_>) -> DMatrix<f64> {
    let n = mp.gen.n();
    let mut qv = DMatrix::zeros(n, n);
    for (_, from, to) in mp.path.jumps() {
        qv[(from, from)] += 1.0;
        qv[(to, to)] += 1.0;
        qv[(from, to)] -= 1.0;
        qv[(to, from)] -= 1.0;
    }
    qv
}

/// Predictable quadratic variation `⟨M, M⟩_T = ∫_0^T Φ_u(X_{u-}) du`.
pub fn predictable_qv(mp: &MartingalePath<'_>) -> DMatrix<f64> {
    let n = mp.gen.n();
    let mut qv = DMatrix::zeros(n, n);
    for p in mp.pieces(&[]) {
        let rates = &mp.gen.segments()[p.segment].rates;
        qv += phi_from_rates(rates, p.state) * (p.end - p.start);
    }
    qv
}

/// Monte Carlo summary of the martingale checks: `E[M_T] = 0` per
/// component and `E([M, M]_T - ⟨M, M⟩_T) = 0` per entry `i <= j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleBattery {
    pub mean_m: Vec<Estimate>,
    pub qv_diff: Vec<((usize, usize), Estimate)>,
}

impl MartingaleBattery {
    /// Every statistic within `k` standard errors of zero.
    pub fn within(&self, k: f64) -> bool {
        self.mean_m.iter().all(|e| e.within(0.0, k))
            && self.qv_diff.iter().all(|(_, e)| e.within(0.0, k))
    }
}

/// Run the battery on `n_paths` paths with initial states drawn from `law`.
/// Path `idx` uses seed `path_seed(seed, idx)`; results do not depend on the
/// thread count.
pub fn martingale_battery(
    gen: &Generator,
    law: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<MartingaleBattery, ChainError> {
    const CHUNK: usize = 1024;
    let n = gen.n();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let chunks = (0..n_paths.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut m = vec![Accumulator::default(); n];
            let mut q = vec![Accumulator::default(); pairs.len()];
            for idx in c * CHUNK..((c + 1) * CHUNK).min(n_paths) {
                let path = sample_path_from_law(gen, law, path_seed(seed, idx as u64))?;
                let mp = MartingalePath::new(gen, path);
                let mt = martingale_value(&mp, gen.horizon());
                let diff = realized_qv(&mp) - predictable_qv(&mp);
                for (acc, v) in m.iter_mut().zip(mt.iter()) {
                    acc.push(*v);
                }
                for (acc, &(i, j)) in q.iter_mut().zip(&pairs) {
                    acc.push(diff[(i, j)]);
                }
            }
            Ok((m, q))
        })
        .collect::<Result<Vec<_>, ChainError>>()?;
    let mut m = vec![Accumulator::default(); n];
    let mut q = vec![Accumulator::default(); pairs.len()];
    for (cm, cq) in &chunks {
        m.iter_mut().zip(cm).for_each(|(a, b)| a.merge(b));
        q.iter_mut().zip(cq).for_each(|(a, b)| a.merge(b));
    }
    Ok(MartingaleBattery {
        mean_m: m.iter().map(Accumulator::estimate).collect(),
        qv_diff: pairs.into_iter().zip(q.iter().map(Accumulator::estimate)).collect(),
    })
}

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{ChainError, Generator};

/// One realized trajectory: initial state plus `(jump time, new state)`
/// events on `(0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainPath {
    pub x0: usize,
    pub events: Vec<(f64, usize)>,
    pub horizon: f64,
}

impl ChainPath {
    /// `X_t` (right-continuous).
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.events.partition_point(|&(s, _)| s <= t);
        if k == 0 {
            self.x0
        } else {
            self.events[k - 1].1
        }
    }

    /// Left limit `X_{t-}`.
    pub fn state_before(&self, t: f64) -> usize {
        let k = self.events.partition_point(|&(s, _)| s < t);
        if k == 0 {
            self.x0
        } else {
            self.events[k - 1].1
        }
    }

    pub fn final_state(&self) -> usize {
        self.events.last().map_or(self.x0, |e| e.1)
    }

    pub fn jump_count(&self) -> usize {
        self.events.len()
    }

    /// Jumps as `(time, from, to)`.
    pub fn jumps(&self) -> impl Iterator<Item = (f64, usize, usize)> + '_ {
        let mut prev = self.x0;
        self.events.iter().map(move |&(t, to)| {
            let from = prev;
            prev = to;
            (t, from, to)
        })
    }

    pub fn check(&self) -> Result<(), ChainError> {
        let mut last_t = 0.0;
        let mut last_state = self.x0;
        for &(t, s) in &self.events {
            if !(t > last_t && t <= self.horizon) {
                return Err(ChainError::BadGrid(format!(
                    "jump time {t} not increasing within (0, {}]",
                    self.horizon
                )));
            }
            if s == last_state {
                return Err(ChainError::BadGrid(format!(
                    "jump at {t} does not change state"
                )));
            }
            last_t = t;
            last_state = s;
        }
        Ok(())
    }

    /// CSV with header `jump_time,new_state`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("jump_time,new_state\n");
        for (t, s) in &self.events {
            let _ = writeln!(out, "{t},{s}");
        }
        out
    }
}

/// Exact jump-chain simulation, deterministic in `seed`.
pub fn sample_path(gen: &Generator, x0: usize, seed: u64) -> Result<ChainPath, ChainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_path_with_rng(gen, x0, &mut rng)
}

/// Initial state drawn from `law`, then a path; deterministic in `seed`.
pub fn sample_path_from_law(
    gen: &Generator,
    law: &[f64],
    seed: u64,
) -> Result<ChainPath, ChainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut x0 = law.iter().rposition(|&w| w > 0.0).unwrap_or(0);
    for (i, &w) in law.iter().enumerate() {
        acc += w;
        if u < acc {
            x0 = i;
            break;
        }
    }
    sample_path_with_rng(gen, x0, &mut rng)
}

/// Holding times are exponential with rate `-A_ii` inside each segment and
/// restart at segment boundaries by memorylessness.
pub fn sample_path_with_rng<R: Rng + ?Sized>(
    gen: &Generator,
    x0: usize,
    rng: &mut R,
) -> Result<ChainPath, ChainError> {
    gen.check_state(x0)?;
    let horizon = gen.horizon();
    let mut events = Vec::new();
    let mut state = x0;
    let mut t = 0.0;
    let mut seg = 0;
    while seg < gen.segments().len() {
        let end = gen.segment_end(seg);
        let rates = &gen.segments()[seg].rates;
        let exit = -rates[(state, state)];
        if exit <= 0.0 {
            t = end;
            seg += 1;
            continue;
        }
        let hold = Exp::new(exit).expect("positive exit rate").sample(rng);
        if t + hold >= end {
            t = end;
            seg += 1;
            continue;
        }
        t += hold;
        let mut target = rng.gen::<f64>() * exit;
        let mut next = state;
        for j in (0..gen.n()).filter(|&j| j != state) {
            let r = rates[(j, state)];
            if r <= 0.0 {
                continue;
            }
            next = j;
            if target < r {
                break;
            }
            target -= r;
        }
        state = next;
        events.push((t, state));
    }
    debug_assert!(t == horizon);
    Ok(ChainPath {
        x0,
        events,
        horizon,
    })
}

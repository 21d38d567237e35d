use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::markov_chain::{seminorm_sq_from_rates, Generator};

/// Arguments of a driver evaluation. Primed fields belong to the
/// independent copy averaged by `E'`.
///
/// `zp_norm` is the seminorm of `zp` at the primed state `ip`; `z_norm` is
/// the seminorm of `z` at `i`. Both use the rates active at `t`.
#[derive(Debug, Clone, Copy)]
pub struct DriverPoint<'a> {
    pub t: f64,
    pub ip: usize,
    pub yp: f64,
    pub zp: &'a [f64],
    pub zp_norm: f64,
    pub i: usize,
    pub y: f64,
    pub z: &'a [f64],
    pub z_norm: f64,
}

type DriverFn = dyn Fn(&DriverPoint<'_>) -> f64 + Send + Sync;

/// Coefficient `f(t, i', y', z', i, y, z)` with its declared Lipschitz
/// constant.
#[derive(Clone)]
pub struct Driver {
    func: Arc<DriverFn>,
    lipschitz: f64,
    description: String,
}

impl fmt::Debug for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Driver")
            .field("description", &self.description)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl Driver {
    pub fn new<F>(lipschitz: f64, description: impl Into<String>, func: F) -> Self
    where
        F: Fn(&DriverPoint<'_>) -> f64 + Send + Sync + 'static,
    {
        Self {
            func: Arc::new(func),
            lipschitz,
            description: description.into(),
        }
    }

    pub fn zero() -> Self {
        Self::new(0.0, "0", |_| 0.0)
    }

    #[inline]
    pub fn eval(&self, p: &DriverPoint<'_>) -> f64 {
        (self.func)(p)
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Pointwise sum; the Lipschitz constants add.
    pub fn plus(&self, other: &Driver) -> Driver {
        let (a, b) = (self.func.clone(), other.func.clone());
        Driver {
            func: Arc::new(move |p| a(p) + b(p)),
            lipschitz: self.lipschitz + other.lipschitz,
            description: format!("({}) + ({})", self.description, other.description),
        }
    }
}

/// `E'[f](t, i) = Σ_{i'} law(i') f(t, i', yp(i'), zp, i, y, z)`.
///
/// In the Markovian representation every copy shares the same `Z'` row;
/// only the primed state (and hence `y'` and the seminorm of `z'`) varies.
#[allow(clippy::too_many_arguments)]
pub fn meanfield_expectation(
    f: &Driver,
    rates: &DMatrix<f64>,
    t: f64,
    law: &[f64],
    yp: &[f64],
    zp: &[f64],
    i: usize,
    y: f64,
    z: &[f64],
) -> f64 {
    let z_norm = seminorm_sq_from_rates(rates, z, i).sqrt();
    law.iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(ip, &w)| {
            let p = DriverPoint {
                t,
                ip,
                yp: yp[ip],
                zp,
                zp_norm: seminorm_sq_from_rates(rates, zp, ip).sqrt(),
                i,
                y,
                z,
                z_norm,
            };
            w * f.eval(&p)
        })
        .sum()
}

/// Mean-field term for every outer state at once: entry `i` is
/// `E'[f](t, i)` with outer arguments `(y[i], z)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn meanfield_all(
    f: &Driver,
    rates: &DMatrix<f64>,
    t: f64,
    law: &[f64],
    yp: &[f64],
    zp: &[f64],
    y: &[f64],
    z: &[f64],
    out: &mut [f64],
) {
    let n = law.len();
    let mut zp_norms = [0.0; 16];
    let mut zp_norms_heap;
    let zp_norms: &mut [f64] = if n <= 16 {
        &mut zp_norms[..n]
    } else {
        zp_norms_heap = vec![0.0; n];
        &mut zp_norms_heap
    };
    for (ip, v) in zp_norms.iter_mut().enumerate() {
        if law[ip] > 0.0 {
            *v = seminorm_sq_from_rates(rates, zp, ip).sqrt();
        }
    }
    for (i, o) in out.iter_mut().enumerate() {
        let z_norm = seminorm_sq_from_rates(rates, z, i).sqrt();
        let mut acc = 0.0;
        for (ip, &w) in law.iter().enumerate() {
            if w > 0.0 {
                let p = DriverPoint {
                    t,
                    ip,
                    yp: yp[ip],
                    zp,
                    zp_norm: zp_norms[ip],
                    i,
                    y: y[i],
                    z,
                    z_norm,
                };
                acc += w * f.eval(&p);
            }
        }
        *o = acc;
    }
}

/// Outcome of the randomized Lipschitz spot check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpotCheck {
    pub declared: f64,
    pub max_ratio: f64,
    pub pairs: usize,
}

impl SpotCheck {
    /// Soft check: observed ratio within 5% of the declared constant.
    pub fn ok(&self) -> bool {
        self.max_ratio <= 1.05 * self.declared
    }
}

/// Largest observed `|f(a) - f(b)| / (|Δy'| + ‖Δz'‖ + |Δy| + ‖Δz‖)` over
/// random point pairs sharing `(t, i, i')`.
pub fn lipschitz_spot_check(f: &Driver, gen: &Generator, pairs: usize, seed: u64) -> SpotCheck {
    let n = gen.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio: f64 = 0.0;
    let draw = |rng: &mut ChaCha8Rng, scale: f64| -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
    };
    for _ in 0..pairs {
        let t = rng.gen_range(0.0..gen.horizon());
        let rates = gen.rates_at(t);
        let i = rng.gen_range(0..n);
        let ip = rng.gen_range(0..n);
        // Mix large and small separations.
        let scale = if rng.gen_bool(0.5) { 3.0 } else { 0.05 };
        let (ya, yb) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let yb = ya + (yb - ya) * scale / 3.0;
        let (ypa, ypb) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let ypb = ypa + (ypb - ypa) * scale / 3.0;
        let za = draw(&mut rng, 3.0);
        let dz = draw(&mut rng, scale);
        let zb: Vec<f64> = za.iter().zip(&dz).map(|(a, d)| a + d).collect();
        let zpa = draw(&mut rng, 3.0);
        let dzp = draw(&mut rng, scale);
        let zpb: Vec<f64> = zpa.iter().zip(&dzp).map(|(a, d)| a + d).collect();

        let point = |yp: f64, zp: &[f64], y: f64, z: &[f64]| {
            let p = DriverPoint {
                t,
                ip,
                yp,
                zp,
                zp_norm: seminorm_sq_from_rates(rates, zp, ip).sqrt(),
                i,
                y,
                z,
                z_norm: seminorm_sq_from_rates(rates, z, i).sqrt(),
            };
            f.eval(&p)
        };
        let fa = point(ypa, &zpa, ya, &za);
        let fb = point(ypb, &zpb, yb, &zb);
        let denom = (ypa - ypb).abs()
            + seminorm_sq_from_rates(rates, &dzp, ip).sqrt()
            + (ya - yb).abs()
            + seminorm_sq_from_rates(rates, &dz, i).sqrt();
        if denom > 1e-12 {
            max_ratio = max_ratio.max((fa - fb).abs() / denom);
        } else if (fa - fb).abs() > 1e-12 {
            max_ratio = f64::INFINITY;
        }
    }
    SpotCheck {
        declared: f.lipschitz(),
        max_ratio,
        pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym2() -> Generator {
        Generator::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]], 1.0).unwrap()
    }

    #[test]
    fn expectation_reduces_without_primed_dependence() {
        let gen = sym2();
        let f = Driver::new(1.0, "y + t", |p| p.y + p.t);
        let v = meanfield_expectation(
            &f,
            gen.rates_at(0.0),
            0.5,
            &[0.3, 0.7],
            &[9.0, -9.0],
            &[0.0, 0.0],
            1,
            2.0,
            &[0.0, 0.0],
        );
        assert!((v - 2.5).abs() < 1e-15);
    }

    #[test]
    fn expectation_of_primed_value() {
        let gen = sym2();
        let f = Driver::new(1.0, "yp", |p| p.yp);
        let v = meanfield_expectation(
            &f,
            gen.rates_at(0.0),
            0.0,
            &[0.75, 0.25],
            &[2.0, 0.0],
            &[2.0, 0.0],
            0,
            0.0,
            &[2.0, 0.0],
        );
        assert_eq!(v, 1.5);
    }

    #[test]
    fn expectation_of_primed_seminorm() {
        let gen = Generator::from_rows(
            &[vec![-1.0, 2.0, 0.0], vec![0.5, -2.0, 1.0], vec![0.5, 0.0, -1.0]],
            1.0,
        )
        .unwrap();
        let rates = gen.rates_at(0.0);
        let f = Driver::new(1.0, "snorm_p(zp)", |p| p.zp_norm);
        let law = [0.2, 0.5, 0.3];
        let z = [1.0, -0.5, 2.0];
        let v = meanfield_expectation(&f, rates, 0.0, &law, &z, &z, 0, 0.0, &z);
        let expected: f64 = (0..3)
            .map(|ip| law[ip] * crate::markov_chain::seminorm_sq(&z, &gen, 0.0, ip).unwrap().sqrt())
            .sum();
        assert!((v - expected).abs() < 1e-15);
        let mut all = [0.0; 3];
        meanfield_all(&f, rates, 0.0, &law, &z, &z, &z, &z, &mut all);
        assert!(all.iter().all(|a| (a - expected).abs() < 1e-15));
    }

    #[test]
    fn spot_check_flags_understated_constant() {
        let gen = sym2();
        let honest = Driver::new(2.0, "2 sin(y)", |p| 2.0 * p.y.sin());
        assert!(lipschitz_spot_check(&honest, &gen, 1000, 1).ok());
        let liar = Driver::new(0.5, "3 y", |p| 3.0 * p.y);
        let check = lipschitz_spot_check(&liar, &gen, 1000, 1);
        assert!(!check.ok());
        assert!(check.max_ratio > 1.05 * 0.5 && check.max_ratio <= 3.0 + 1e-12);
        // Depends on raw z, not on the seminorm: flagged as unbounded.
        let raw = Driver::new(1.0, "z1", |p| p.z[0]);
        assert!(!lipschitz_spot_check(&raw, &gen, 1000, 1).ok());
    }

    #[test]
    fn plus_adds_constants() {
        let a = Driver::new(1.0, "y", |p| p.y);
        let b = Driver::new(0.5, "0.5", |_| 0.5);
        let s = a.plus(&b);
        assert_eq!(s.lipschitz(), 1.5);
        let z = [0.0, 0.0];
        let p = DriverPoint {
            t: 0.0,
            ip: 0,
            yp: 0.0,
            zp: &z,
            zp_norm: 0.0,
            i: 0,
            y: 2.0,
            z: &z,
            z_norm: 0.0,
        };
        assert_eq!(s.eval(&p), 2.5);
    }
}

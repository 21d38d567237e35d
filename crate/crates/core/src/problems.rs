//! Reference problems and random instances for tests and experiments.
//!
//! Drivers are written in the expression language so every instance can be
//! printed and reloaded.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dsl::{parse_driver, DriverExpr};
use crate::markov_chain::{matrix_from_rows, validate_generator, Generator};
use crate::meanfield_bsde::{Driver, MeanFieldProblem, TerminalCondition};

#[derive(Debug, Clone)]
pub struct NamedProblem {
    pub name: &'static str,
    pub driver_text: String,
    pub problem: MeanFieldProblem,
}

/// Parse `text` into a driver with the given constant.
pub fn dsl_driver(text: &str, lipschitz: f64) -> Driver {
    DriverExpr {
        lipschitz,
        ..parse_driver(text).expect("valid driver expression")
    }
    .to_driver()
}

fn named(
    name: &'static str,
    gen: Generator,
    mu0: Vec<f64>,
    g: Vec<f64>,
    text: &str,
    lipschitz: f64,
) -> NamedProblem {
    let problem = MeanFieldProblem::new(
        gen,
        DVector::from_vec(mu0),
        TerminalCondition::markovian(g),
        dsl_driver(text, lipschitz),
    )
    .expect("consistent reference problem");
    NamedProblem {
        name,
        driver_text: text.to_string(),
        problem,
    }
}

fn rows(r: &[&[f64]]) -> Vec<Vec<f64>> {
    r.iter().map(|x| x.to_vec()).collect()
}

pub fn chain3(horizon: f64) -> Generator {
    Generator::from_rows(
        &rows(&[&[-1.0, 0.5, 0.2], &[0.7, -0.9, 0.3], &[0.3, 0.4, -0.5]]),
        horizon,
    )
    .expect("valid generator")
}

/// Every problem the cross-checks run on.
pub fn test_problem_set() -> Vec<NamedProblem> {
    let two_phase = {
        let a1 = matrix_from_rows(&rows(&[&[-1.0, 2.0], &[1.0, -2.0]])).unwrap();
        let a2 = matrix_from_rows(&rows(&[&[-3.0, 0.5], &[3.0, -0.5]])).unwrap();
        validate_generator(vec![(0.0, a1), (0.37, a2)], 1.0).unwrap()
    };
    let four = Generator::from_rows(
        &rows(&[
            &[-1.2, 0.3, 0.2, 0.4],
            &[0.5, -0.8, 0.3, 0.1],
            &[0.4, 0.2, -0.9, 0.5],
            &[0.3, 0.3, 0.4, -1.0],
        ]),
        1.0,
    )
    .unwrap();
    vec![
        named("zero_driver", chain3(1.0), vec![0.5, 0.3, 0.2], vec![1.0, -2.0, 0.5], "0", 0.0),
        named("pure_meanfield_exp", chain3(1.0), vec![0.5, 0.3, 0.2], vec![1.0; 3], "yp", 1.0),
        named("linear_decay", chain3(1.0), vec![0.5, 0.3, 0.2], vec![2.0; 3], "-y", 1.0),
        named(
            "mixed_nonlinear",
            chain3(1.0),
            vec![0.2, 0.5, 0.3],
            vec![1.0, -0.5, 2.0],
            "0.5*sin(yp) - 0.3*y + 0.2*tanh(snorm(z)) + 0.1*snorm_p(zp) + 0.1*cos(t)",
            0.5,
        ),
        named(
            "two_phase",
            two_phase,
            vec![0.4, 0.6],
            vec![1.0, -1.0],
            "min(yp, 1) - 0.5*y + 0.3*snorm(z)",
            1.0,
        ),
        named(
            "four_state",
            four,
            vec![0.25, 0.25, 0.25, 0.25],
            vec![0.0, 1.0, -1.0, 0.5],
            "tanh(yp - y) + 0.1*ip*cos(t) - 0.2*snorm_p(zp)",
            1.0,
        ),
        named(
            "deterministic_sin",
            chain3(1.0),
            vec![0.5, 0.3, 0.2],
            vec![0.5; 3],
            "sin(yp)",
            1.0,
        ),
    ]
}

/// Dense rate matrix with off-diagonal rates uniform in `[lo, hi)`.
pub fn random_rates<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut exit = 0.0;
        for j in (0..n).filter(|&j| j != i) {
            let r = rng.gen_range(lo..hi);
            a[(j, i)] = r;
            exit += r;
        }
        a[(i, i)] = -exit;
    }
    a
}

/// Generator with `segments` random pieces, some rates possibly zero.
pub fn random_generator<R: Rng>(rng: &mut R, n: usize, horizon: f64, segments: usize) -> Generator {
    let mut starts: Vec<f64> = (1..segments).map(|_| rng.gen_range(0.05..0.95) * horizon).collect();
    starts.sort_by(f64::total_cmp);
    starts.dedup();
    starts.insert(0, 0.0);
    let raw = starts
        .into_iter()
        .map(|s| {
            let mut a = random_rates(rng, n, 0.0, 2.0);
            // Sparsify a little so absorbing and one-way moves appear.
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    if rng.gen_bool(0.2) {
                        a[(i, i)] += a[(j, i)];
                        a[(j, i)] = 0.0;
                    }
                }
            }
            (s, a)
        })
        .collect();
    validate_generator(raw, horizon).expect("valid random generator")
}

pub fn random_law<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    let w = DVector::from_fn(n, |_, _| rng.gen_range(0.05..1.0));
    let s = w.sum();
    w / s
}

fn coef<R: Rng>(rng: &mut R, bound: f64) -> f64 {
    (rng.gen_range(-bound..bound) * 1000.0).round() / 1000.0
}

/// Random driver text with Lipschitz constant at most `c_max`, mixing
/// every kind of argument.
pub fn random_driver_text<R: Rng>(rng: &mut R, c_max: f64) -> (String, f64) {
    let a = [
        coef(rng, c_max),
        coef(rng, c_max),
        coef(rng, c_max),
        coef(rng, c_max),
        coef(rng, 1.0),
    ];
    let text = format!(
        "{} * sin(yp) + {} * tanh(y) + {} * min(snorm(z), 1) + {} * snorm_p(zp) + {} * cos(3 * t) * ip",
        a[0], a[1], a[2], a[3], a[4]
    );
    let c = a[..4].iter().fold(0.0f64, |m, x| m.max(x.abs()));
    (text, c)
}

/// Random problem on `n` states with horizon `horizon` and driver constant
/// at most `c_max`.
pub fn random_problem<R: Rng>(rng: &mut R, n: usize, horizon: f64, c_max: f64) -> (String, MeanFieldProblem) {
    let segments = rng.gen_range(1..=2);
    let gen = random_generator(rng, n, horizon, segments);
    let mu0 = random_law(rng, n);
    let g: Vec<f64> = (0..n).map(|_| coef(rng, 2.0)).collect();
    let (text, c) = random_driver_text(rng, c_max);
    let p = MeanFieldProblem::new(gen, mu0, TerminalCondition::markovian(g), dsl_driver(&text, c))
        .expect("consistent random problem");
    (text, p)
}

/// Random comparison pair in the class where the ordering is guaranteed:
/// dense rates, drivers nondecreasing in `y'`, seminorm coefficients small
/// against the smallest jump rate, `f₁ = f₂ + δ` with `δ ≥ 0` and
/// `ξ¹ ≥ ξ²`.
pub fn random_comparison_pair<R: Rng>(rng: &mut R, n: usize) -> (MeanFieldProblem, MeanFieldProblem) {
    let rates = random_rates(rng, n, 0.5, 1.5);
    let min_rate = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (j, i)))
        .map(|ij| rates[ij])
        .fold(f64::INFINITY, f64::min);
    let max_rate = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (j, i)))
        .map(|ij| rates[ij])
        .fold(0.0f64, f64::max);
    let max_exit = (0..n).map(|i| -rates[(i, i)]).fold(0.0f64, f64::max);
    let gen = Generator::constant(rates, 1.0).expect("valid dense generator");
    let mu0 = random_law(rng, n);

    // |d_z| sqrt(max rate) + |d_zp| sqrt(max exit) <= min rate.
    let budget = 0.9 * min_rate;
    let share = rng.gen_range(0.0..1.0);
    let dz = (coef(rng, 1.0) * share * budget / max_rate.sqrt()).clamp(-1.0, 1.0);
    let dzp = (coef(rng, 1.0) * (1.0 - share) * budget / max_exit.sqrt()).clamp(-1.0, 1.0);
    let myp = rng.gen_range(0.0..1.0);
    let my = coef(rng, 1.0);
    let mt = coef(rng, 0.5);
    let f2_text = format!(
        "{myp} * tanh(yp) + {my} * sin(y) + {dz} * tanh(snorm(z)) + {dzp} * snorm_p(zp) + {mt} * cos(t) * i"
    );
    let c = [myp, my.abs(), dz.abs(), dzp.abs()].into_iter().fold(0.0, f64::max);
    let e0 = rng.gen_range(0.0..0.3);
    let e1 = rng.gen_range(0.0..0.3);
    let f1_text = format!("{f2_text} + {e0} + {e1} * (1 + sin(y + t))");

    let g2: Vec<f64> = (0..n).map(|_| coef(rng, 2.0)).collect();
    let g1: Vec<f64> = g2
        .iter()
        .map(|&v| if rng.gen_bool(0.3) { v } else { v + rng.gen_range(0.0..0.5) })
        .collect();
    let p2 = MeanFieldProblem::new(
        gen.clone(),
        mu0.clone(),
        TerminalCondition::markovian(g2),
        dsl_driver(&f2_text, c),
    )
    .expect("consistent");
    let p1 = MeanFieldProblem::new(
        gen,
        mu0,
        TerminalCondition::markovian(g1),
        dsl_driver(&f1_text, c + e1),
    )
    .expect("consistent");
    (p1, p2)
}

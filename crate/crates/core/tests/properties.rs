use mfbsde::dsl::parse_driver;
use mfbsde::markov_chain::{
    evolve_law, phi_from_rates, seminorm_sq_from_rates, transition_matrix, uniform_grid, Generator,
};
use mfbsde::meanfield_bsde::{
    picard_solve, solve_markovian, DriverPoint, MeanFieldProblem, PicardOptions, TerminalCondition,
    Variant,
};
use mfbsde::problems::{dsl_driver, random_generator, random_law, random_problem, random_rates};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rates_strategy() -> impl Strategy<Value = DMatrix<f64>> {
    (2usize..=8, any::<u64>()).prop_map(|(n, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_rates(&mut rng, n, 0.0, 3.0)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn phi_is_symmetric_psd_and_kills_constants(a in rates_strategy(), pick in any::<usize>()) {
        let n = a.nrows();
        let state = pick % n;
        let phi = phi_from_rates(&a, state);
        prop_assert!((&phi - phi.transpose()).amax() < 1e-12);
        prop_assert!((&phi * DVector::from_element(n, 1.0)).amax() < 1e-12);
        let eig = phi.symmetric_eigenvalues();
        prop_assert!(eig.min() >= -1e-10, "{eig}");
    }

    #[test]
    fn seminorm_matches_quadratic_form_and_ignores_shifts(
        a in rates_strategy(),
        pick in any::<usize>(),
        z in prop::collection::vec(-5.0f64..5.0, 8),
        shift in -10.0f64..10.0,
    ) {
        let n = a.nrows();
        let state = pick % n;
        let z = &z[..n];
        let v = DVector::from_column_slice(z);
        let quad = (v.transpose() * phi_from_rates(&a, state) * &v)[(0, 0)];
        let s = seminorm_sq_from_rates(&a, z, state);
        prop_assert!((quad - s).abs() <= 1e-9 * (1.0 + s));
        let shifted: Vec<f64> = z.iter().map(|x| x + shift).collect();
        let s2 = seminorm_sq_from_rates(&a, &shifted, state);
        prop_assert!((s - s2).abs() <= 1e-9 * (1.0 + s));
    }

    #[test]
    fn transition_matrices_compose(seed in any::<u64>(), n in 2usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gen = random_generator(&mut rng, n, 2.0, 3);
        let mut ts = [rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0)];
        ts.sort_by(f64::total_cmp);
        let [s, u, t] = ts;
        let direct = transition_matrix(&gen, s, t).unwrap();
        let split = transition_matrix(&gen, u, t).unwrap() * transition_matrix(&gen, s, u).unwrap();
        prop_assert!((&direct - &split).amax() < 1e-10);
        for c in 0..n {
            prop_assert!((direct.column(c).sum() - 1.0).abs() < 1e-10);
            prop_assert!(direct.column(c).min() >= 0.0);
        }
    }

    #[test]
    fn laws_stay_on_the_simplex(seed in any::<u64>(), n in 2usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gen = random_generator(&mut rng, n, 1.0, 2);
        let mu0 = random_law(&mut rng, n);
        let path = evolve_law(&gen, &mu0, &uniform_grid(1.0, 20)).unwrap();
        for mu in &path.laws {
            prop_assert!((mu.sum() - 1.0).abs() < 1e-12);
            prop_assert!(mu.min() >= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn picard_schemes_reach_the_direct_solution(seed in any::<u64>(), n in 2usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (text, p) = random_problem(&mut rng, n, 1.0, 1.0);
        let direct = solve_markovian(&p, 40).unwrap();
        for variant in [Variant::Y, Variant::ZPrime] {
            let out = picard_solve(&p, 40, &PicardOptions::new(variant)).unwrap();
            prop_assert!(out.solution.sup_distance(&direct) < 1e-8, "{text} {variant:?}");
        }
    }
}

type Hand = fn(&DriverPoint<'_>) -> f64;

#[test]
fn dsl_drivers_match_hand_coded() {
    let catalog: &[(&str, Hand)] = &[
        ("0", |_| 0.0),
        ("yp", |p| p.yp),
        ("-y", |p| -p.y),
        ("max(y, 0) - 0.5*snorm(z)", |p| p.y.max(0.0) - 0.5 * p.z_norm),
        ("0.5*sin(yp) - 0.3*y + 0.2*tanh(snorm(z)) + 0.1*snorm_p(zp) + 0.1*cos(t)", |p| {
            0.5 * p.yp.sin() - 0.3 * p.y + 0.2 * p.z_norm.tanh() + 0.1 * p.zp_norm + 0.1 * p.t.cos()
        }),
        ("min(yp, 1) - 0.5*y + 0.3*snorm(z)", |p| p.yp.min(1.0) - 0.5 * p.y + 0.3 * p.z_norm),
        ("tanh(yp - y) + 0.1*ip*cos(t) - 0.2*snorm_p(zp)", |p| {
            (p.yp - p.y).tanh() + 0.1 * (p.ip + 1) as f64 * p.t.cos() - 0.2 * p.zp_norm
        }),
        ("abs(z1 - z2) / 2 + zp3 * i", |p| (p.z[0] - p.z[1]).abs() / 2.0 + p.zp[2] * (p.i + 1) as f64),
        ("-(y - yp) * -2 + max(t, max(yp, y))", |p| -(p.y - p.yp) * -2.0 + p.t.max(p.yp.max(p.y))),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for (text, hand) in catalog {
        let driver = parse_driver(text).unwrap();
        for _ in 0..1000 {
            let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let zp: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let point = DriverPoint {
                t: rng.gen_range(0.0..2.0),
                ip: rng.gen_range(0..3),
                yp: rng.gen_range(-3.0..3.0),
                zp: &zp,
                zp_norm: rng.gen_range(0.0..3.0),
                i: rng.gen_range(0..3),
                y: rng.gen_range(-3.0..3.0),
                z: &z,
                z_norm: rng.gen_range(0.0..3.0),
            };
            let (a, b) = (driver.eval(&point), hand(&point));
            assert!((a - b).abs() <= 1e-12, "{text}: {a} vs {b}");
        }
    }
}

#[test]
fn smooth_driver_errors_shrink_with_refinement() {
    let gen = Generator::from_rows(&[vec![-1.0, 2.0], vec![1.0, -2.0]], 1.0).unwrap();
    let p = MeanFieldProblem::new(
        gen,
        DVector::from_vec(vec![0.3, 0.7]),
        TerminalCondition::markovian(vec![1.0, -0.5]),
        dsl_driver("0.5*sin(yp) - 0.3*y + 0.2*tanh(z1 - z2)", 0.5),
    )
    .unwrap();
    let reference = solve_markovian(&p, 2000).unwrap();
    let errors: Vec<f64> = [25, 50, 100, 200]
        .iter()
        .map(|&k| (solve_markovian(&p, k).unwrap().initial() - reference.initial()).amax())
        .collect();
    for w in errors.windows(2) {
        assert!(w[1] <= w[0], "{errors:?}");
    }
}

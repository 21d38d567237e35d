//! Matrix exponential by scaling and squaring with diagonal Padé
//! approximants of degree 3, 5, 7, 9 or 13 (Higham's 2005 selection).

use nalgebra::DMatrix;

const THETA: [(usize, f64); 4] = [
    (3, 1.495_585_217_958_292e-2),
    (5, 2.539_398_330_063_23e-1),
    (7, 9.504_178_996_162_932e-1),
    (9, 2.097_847_961_257_068),
];
const THETA_13: f64 = 5.371_920_351_148_152;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17_297_280.0,
    8_648_640.0,
    1_995_840.0,
    277_200.0,
    25_200.0,
    1_512.0,
    56.0,
    1.0,
];
const B9: [f64; 10] = [
    17_643_225_600.0,
    8_821_612_800.0,
    2_075_673_600.0,
    302_702_400.0,
    30_270_240.0,
    2_162_160.0,
    110_880.0,
    3_960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(a)` for a square real matrix.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let norm = one_norm(a);
    let ident = DMatrix::<f64>::identity(n, n);
    if norm == 0.0 {
        return ident;
    }

    for &(m, theta) in &THETA {
        if norm <= theta {
            let (u, v) = pade_low(a, m, &ident);
            return solve_pade(&u, &v);
        }
    }

    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(s);
    let (u, v) = pade13(&scaled, &ident);
    let mut r = solve_pade(&u, &v);
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

fn pade_low(a: &DMatrix<f64>, m: usize, ident: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let b: &[f64] = match m {
        3 => &B3,
        5 => &B5,
        7 => &B7,
        9 => &B9,
        _ => unreachable!("unsupported Padé degree {m}"),
    };
    let a2 = a * a;
    // Even powers I, A², A⁴, …
    let mut powers = vec![ident.clone(), a2.clone()];
    while powers.len() < m / 2 + 1 {
        let next = powers.last().unwrap() * &a2;
        powers.push(next);
    }
    let mut odd = DMatrix::zeros(a.nrows(), a.ncols());
    let mut even = DMatrix::zeros(a.nrows(), a.ncols());
    for (k, p) in powers.iter().enumerate() {
        if 2 * k < m {
            odd += p * b[2 * k + 1];
        }
        if 2 * k <= m {
            even += p * b[2 * k];
        }
    }
    (a * odd, even)
}

fn pade13(a: &DMatrix<f64>, ident: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let b = &B13;
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (u_inner + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + ident * b[1]);
    let v_inner = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = v_inner + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + ident * b[0];
    (u, v)
}

fn solve_pade(u: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let p = v + u;
    let q = v - u;
    q.lu()
        .solve(&p)
        .expect("Padé denominator is nonsingular for the selected degree")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_and_diagonal() {
        assert_eq!(expm(&DMatrix::zeros(3, 3)), DMatrix::identity(3, 3));
        for &d in &[1e-4, 0.2, 0.9, 2.0, 5.0, 40.0] {
            let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![d, -d]));
            let e = expm(&m);
            assert!((e[(0, 0)] / d.exp() - 1.0).abs() < 1e-13, "d={d}");
            assert!((e[(1, 1)] / (-d).exp() - 1.0).abs() < 1e-13, "d={d}");
        }
    }

    #[test]
    fn nilpotent_is_exact() {
        let m = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let e = expm(&(m * 3.0));
        let expected =
            DMatrix::from_row_slice(3, 3, &[1.0, 3.0, 4.5, 0.0, 1.0, 3.0, 0.0, 0.0, 1.0]);
        assert!((e - expected).abs().max() < 1e-13);
    }

    #[test]
    fn rotation_generator() {
        let theta = 2.5f64;
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -theta, theta, 0.0]);
        let e = expm(&m);
        assert!((e[(0, 0)] - theta.cos()).abs() < 1e-14);
        assert!((e[(1, 0)] - theta.sin()).abs() < 1e-14);
    }

    #[test]
    fn agrees_with_series_for_small_norms() {
        let m = DMatrix::from_row_slice(
            3,
            3,
            &[-0.3, 0.1, 0.2, 0.2, -0.4, 0.1, 0.1, 0.3, -0.3],
        );
        for &scale in &[0.01, 0.1, 0.5, 1.0, 3.0] {
            let a = &m * scale;
            let mut term = DMatrix::<f64>::identity(3, 3);
            let mut sum = term.clone();
            for k in 1..60 {
                term = &term * &a / k as f64;
                sum += &term;
            }
            assert!((expm(&a) - sum).abs().max() < 1e-14, "scale={scale}");
        }
    }
}

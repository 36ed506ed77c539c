//! Matrix exponential by scaling and squaring with a degree-13 Padé approximant.

use nalgebra::DMatrix;
use num_complex::Complex64;

const PADE13: [f64; 14] = [
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

const THETA13: f64 = 5.371_920_351_148_152;

fn one_norm(a: &DMatrix<Complex64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// `exp(a)` for a square complex matrix.
pub fn expm(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return a.clone();
    }
    let norm = one_norm(a);
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a * c(0.5f64.powi(s));
    let eye = DMatrix::<Complex64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let b = PADE13;
    let w1 = &a6 * c(b[13]) + &a4 * c(b[11]) + &a2 * c(b[9]);
    let w = &a6 * &w1 + &a6 * c(b[7]) + &a4 * c(b[5]) + &a2 * c(b[3]) + &eye * c(b[1]);
    let u = &a * w;
    let z1 = &a6 * c(b[12]) + &a4 * c(b[10]) + &a2 * c(b[8]);
    let v = &a6 * &z1 + &a6 * c(b[6]) + &a4 * c(b[4]) + &a2 * c(b[2]) + &eye * c(b[0]);
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).expect("Pade denominator is nonsingular for ||A|| <= theta13");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_and_rotation() {
        let mut d = DMatrix::<Complex64>::zeros(3, 3);
        d[(0, 0)] = c(1.0);
        d[(1, 1)] = Complex64::new(0.0, 2.0);
        d[(2, 2)] = c(-30.0);
        let e = expm(&d);
        assert!((e[(0, 0)] - c(1f64.exp())).norm() < 1e-14);
        assert!((e[(1, 1)] - Complex64::from_polar(1.0, 2.0)).norm() < 1e-14);
        assert!((e[(2, 2)].re - (-30f64).exp()).abs() < 1e-25);
        // exp of the generator of rotations by 40 rad
        let mut g = DMatrix::<Complex64>::zeros(2, 2);
        g[(0, 1)] = c(-40.0);
        g[(1, 0)] = c(40.0);
        let r = expm(&g);
        assert!((r[(0, 0)].re - 40f64.cos()).abs() < 1e-12);
        assert!((r[(1, 0)].re - 40f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn nilpotent_series_is_exact() {
        let mut a = DMatrix::<Complex64>::zeros(3, 3);
        a[(0, 1)] = c(2.0);
        a[(1, 2)] = c(3.0);
        let e = expm(&a);
        assert!((e[(0, 2)] - c(3.0)).norm() < 1e-13);
        assert!((e[(0, 1)] - c(2.0)).norm() < 1e-13);
    }
}

//! Gauss–Legendre rules, adaptive integration, Fourier helpers and
//! finite-difference weights on nonuniform nodes.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (z * p - p0) / (z * z - 1.0);
    (p, d)
}

/// Fixed-order Gauss–Legendre rule reused across many integrals.
#[derive(Debug, Clone)]
pub struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        GaussRule { nodes, weights }
    }

    pub fn integrate(&self, f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> f64 {
        let h = 0.5 * (b - a);
        let c = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(c + h * t))
            .sum::<f64>()
            * h
    }
}

/// Adaptive bisection with a 20-point Gauss rule; relative-or-absolute `tol`.
pub fn adaptive_integrate(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    let rule = GaussRule::new(20);
    let whole = rule.integrate(&mut f, a, b);
    let mut stack = vec![(a, b, whole, 0u32)];
    let mut total = 0.0;
    let mut err_total = 0.0;
    let mut scale = whole.abs();
    while let Some((lo, hi, est, depth)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let left = rule.integrate(&mut f, lo, mid);
        let right = rule.integrate(&mut f, mid, hi);
        let refined = left + right;
        scale = scale.max(refined.abs());
        let err = (refined - est).abs();
        let local_tol = tol * scale.max(1e-300) * ((hi - lo) / (b - a)).max(1e-6);
        if err <= local_tol || err <= 1e-15 * scale || depth >= 48 {
            if depth >= 48 && err > local_tol {
                err_total += err;
            }
            total += refined;
        } else {
            stack.push((lo, mid, left, depth + 1));
            stack.push((mid, hi, right, depth + 1));
        }
    }
    if !total.is_finite() {
        return Err(Error::Integration("non-finite integrand".into()));
    }
    if err_total > tol * total.abs().max(1e-300) * 10.0 {
        return Err(Error::Accuracy { achieved: err_total / total.abs().max(1e-300), requested: tol });
    }
    Ok(total)
}

/// Forward DFT, unnormalised.
pub fn fft(data: &mut [Complex64]) {
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(data.len()).process(data);
}

/// Inverse DFT including the `1/n` factor.
pub fn ifft(data: &mut [Complex64]) {
    let n = data.len();
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(n).process(data);
    let s = 1.0 / n as f64;
    for v in data.iter_mut() {
        *v *= s;
    }
}

/// Signed wavenumber of DFT slot `j` for a length-`n` transform.
pub fn wavenumber(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Samples on the uniform periodic grid `theta_j = a + j L / n`, returns the
/// periodic antiderivative `G` with `G(a) = 0` of `f - mean(f)`, plus the mean.
/// The Nyquist mode is dropped.
pub fn periodic_antiderivative(samples: &[f64], period: f64) -> (Vec<f64>, f64) {
    let n = samples.len();
    let mut c: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft(&mut c);
    let mean = c[0].re / n as f64;
    c[0] = Complex64::new(0.0, 0.0);
    for (j, v) in c.iter_mut().enumerate().skip(1) {
        let k = wavenumber(j, n);
        if n % 2 == 0 && j == n / 2 {
            *v = Complex64::new(0.0, 0.0);
            continue;
        }
        let freq = 2.0 * PI * k as f64 / period;
        *v /= Complex64::new(0.0, freq);
    }
    ifft(&mut c);
    let g0 = c[0].re;
    (c.iter().map(|v| v.re - g0).collect(), mean)
}

/// Spectral derivative of periodic samples over a period `period`.
pub fn periodic_derivative(samples: &[f64], period: f64) -> Vec<f64> {
    let n = samples.len();
    let mut c: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft(&mut c);
    for (j, v) in c.iter_mut().enumerate() {
        if n % 2 == 0 && j == n / 2 {
            *v = Complex64::new(0.0, 0.0);
            continue;
        }
        let k = wavenumber(j, n);
        *v *= Complex64::new(0.0, 2.0 * PI * k as f64 / period);
    }
    ifft(&mut c);
    c.iter().map(|v| v.re).collect()
}

/// Evaluates a trigonometric interpolant given its DFT coefficients (length `n`)
/// at `theta`, where the samples lived on `a + j L/n`.
pub fn trig_eval(coeffs: &[Complex64], a: f64, period: f64, theta: f64) -> f64 {
    let n = coeffs.len();
    let s = 2.0 * PI * (theta - a) / period;
    let mut acc = coeffs[0].re;
    let half = n / 2;
    for j in 1..n.div_ceil(2) {
        let e = Complex64::from_polar(1.0, j as f64 * s);
        acc += 2.0 * (coeffs[j] * e).re;
    }
    if n % 2 == 0 {
        acc += (coeffs[half] * Complex64::from_polar(1.0, half as f64 * s)).re;
    }
    acc / n as f64
}

/// Fornberg weights for the `m`-th derivative at `z` from nodes `x`.
pub fn fornberg_weights(z: f64, x: &[f64], m: usize) -> Vec<f64> {
    let n = x.len();
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|row| row[m]).collect()
}

/// Chebyshev–Gauss–Lobatto nodes mapped to `[a, b]`, ascending.
pub fn chebyshev_nodes(n: usize, a: f64, b: f64) -> Vec<f64> {
    assert!(n >= 2);
    (0..n)
        .map(|j| {
            let t = -(PI * j as f64 / (n - 1) as f64).cos();
            0.5 * (a + b) + 0.5 * (b - a) * t
        })
        .collect()
}

/// Barycentric interpolation on Chebyshev–Lobatto nodes.
pub fn chebyshev_interpolate(nodes: &[f64], values: &[f64], x: f64) -> f64 {
    let n = nodes.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..n {
        let d = x - nodes[j];
        if d == 0.0 {
            return values[j];
        }
        let mut w = if j % 2 == 0 { 1.0 } else { -1.0 };
        if j == 0 || j == n - 1 {
            w *= 0.5;
        }
        num += w * values[j] / d;
        den += w / d;
    }
    num / den
}

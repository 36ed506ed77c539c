//! Weyl quantisation into the `H0` eigenbasis.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::eigen::EigenBasis;
use super::moyal::PolySymbol;
use super::OperatorMatrix;
use crate::error::{Error, Result};
use crate::par;
use crate::quadrature::gauss_legendre;
use crate::symbol_grid::GridSymbol;

/// Binomial coefficient as a float.
fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// `-i d/dx` on the sinc grid.
pub fn momentum_matrix(n: usize, dx: f64) -> DMatrix<Complex64> {
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            Complex64::new(0.0, 0.0)
        } else {
            let d = i as f64 - j as f64;
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            Complex64::new(0.0, -sign / (dx * d))
        }
    })
}

fn project(basis: &EigenBasis, applied: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let v = basis.vectors.map(|c| Complex64::new(c, 0.0));
    v.transpose() * applied
}

/// Exact Weyl quantisation of a polynomial:
/// `(x^a xi^b)^w = 2^{-a} sum_j C(a, j) X^j D^b X^{a-j}`.
pub fn weyl_quantize_poly(p: &PolySymbol, basis: &EigenBasis) -> OperatorMatrix {
    let n = basis.grid.len();
    let d = momentum_matrix(n, basis.dx);
    let v = basis.vectors.map(|c| Complex64::new(c, 0.0));
    let x_times = |m: &DMatrix<Complex64>, k: u32| -> DMatrix<Complex64> {
        let mut out = m.clone();
        for _ in 0..k {
            for (i, &x) in basis.grid.iter().enumerate() {
                out.row_mut(i).scale_mut(x);
            }
        }
        out
    };
    let mut total = DMatrix::<Complex64>::zeros(n, basis.dim());
    for (&(a, b), &c) in &p.terms {
        let mut acc = DMatrix::<Complex64>::zeros(n, basis.dim());
        for j in 0..=a {
            let mut m = x_times(&v, a - j);
            for _ in 0..b {
                m = &d * m;
            }
            let m = x_times(&m, j);
            acc += m * Complex64::new(binomial(a, j), 0.0);
        }
        total += acc * (c * 0.5f64.powi(a as i32));
    }
    OperatorMatrix::new(project(basis, &total), basis.lambdas.clone())
}

#[derive(Debug, Clone, Copy)]
pub struct WeylOptions {
    /// Gauss–Legendre panels in `xi` per grid point pair count; `None` picks
    /// one panel per two grid points.
    pub xi_panels: Option<usize>,
    /// Relative agreement required between two `xi` resolutions.
    pub tolerance: f64,
}

impl Default for WeylOptions {
    fn default() -> Self {
        WeylOptions { xi_panels: None, tolerance: 1e-8 }
    }
}

fn kernel_matrix(
    g: &(dyn Fn(f64, f64) -> Complex64 + Sync),
    basis: &EigenBasis,
    panels: usize,
) -> DMatrix<Complex64> {
    let n = basis.grid.len();
    let dx = basis.dx;
    let cut = std::f64::consts::PI / dx;
    let (gx, gw) = gauss_legendre(16);
    let h = 2.0 * cut / panels as f64;
    let mut nodes = Vec::with_capacity(panels * 16);
    let mut weights = Vec::with_capacity(panels * 16);
    for p in 0..panels {
        let c = -cut + (p as f64 + 0.5) * h;
        for (t, w) in gx.iter().zip(&gw) {
            nodes.push(c + 0.5 * h * t);
            weights.push(0.5 * h * w / (2.0 * std::f64::consts::PI));
        }
    }
    let x0 = basis.grid[0];
    // phases e^{i m dx xi} for m = i - j in [-(n-1), n-1]
    let phases: Vec<Vec<Complex64>> = (0..2 * n - 1)
        .map(|mi| {
            let m = mi as f64 - (n - 1) as f64;
            nodes.iter().zip(&weights).map(|(&xi, &w)| Complex64::from_polar(w, m * dx * xi)).collect()
        })
        .collect();
    // rows of the grid operator: entry (i, j) = dx * K(x_i, x_j)
    let rows = par::map_range(n, |i| {
        (0..n)
            .map(|j| {
                let mid = x0 + 0.5 * (i + j) as f64 * dx;
                let ph = &phases[i + n - 1 - j];
                let mut acc = Complex64::new(0.0, 0.0);
                for (q, &xi) in nodes.iter().enumerate() {
                    acc += ph[q] * g(mid, xi);
                }
                acc * dx
            })
            .collect::<Vec<_>>()
    });
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

/// Matrix elements `<phi_i, g^w phi_j>` from the midpoint kernel
/// `K(x, y) = (2 pi)^{-1} int e^{i (x - y) xi} g((x + y)/2, xi) dxi`, with `xi`
/// truncated at the grid's Nyquist limit.
pub fn weyl_quantize_fn(
    g: &(dyn Fn(f64, f64) -> Complex64 + Sync),
    basis: &EigenBasis,
    opts: WeylOptions,
) -> Result<OperatorMatrix> {
    let n = basis.grid.len();
    let panels = opts.xi_panels.unwrap_or(n / 2 + 8);
    let v = basis.vectors.map(|c| Complex64::new(c, 0.0));
    let coarse = project(basis, &(kernel_matrix(g, basis, panels) * &v));
    let fine = project(basis, &(kernel_matrix(g, basis, 2 * panels) * &v));
    let scale = fine.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-300);
    let diff = (&fine - &coarse).iter().map(|c| c.norm()).fold(0.0, f64::max) / scale;
    if diff > opts.tolerance {
        return Err(Error::Accuracy { achieved: diff, requested: opts.tolerance });
    }
    Ok(OperatorMatrix::new(fine, basis.lambdas.clone()))
}

/// Weyl quantisation of a sampled symbol, which must cover the basis grid
/// and the Nyquist band `|xi| <= pi/dx`.
pub fn weyl_quantize(g: &GridSymbol, basis: &EigenBasis, opts: WeylOptions) -> Result<OperatorMatrix> {
    let cut = std::f64::consts::PI / basis.dx;
    let (x_lo, x_hi) = (g.x_nodes[0], *g.x_nodes.last().unwrap());
    let (k_lo, k_hi) = (g.xi_nodes[0], *g.xi_nodes.last().unwrap());
    if x_lo > basis.grid[0] || x_hi < *basis.grid.last().unwrap() || k_lo > -cut || k_hi < cut {
        return Err(Error::GridMismatch(format!(
            "symbol grid [{x_lo}, {x_hi}] x [{k_lo}, {k_hi}] does not cover the basis window [{}, {}] x [-{cut}, {cut}]",
            basis.grid[0],
            basis.grid.last().unwrap()
        )));
    }
    weyl_quantize_fn(&|x, xi| g.interpolate_complex(x, xi), basis, opts)
}

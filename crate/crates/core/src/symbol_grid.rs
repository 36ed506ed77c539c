//! Sampled phase-space symbols, the two-index grade system `S^{m1,m2}`,
//! empirical seminorms and order fits.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::quadrature::{adaptive_integrate, fornberg_weights};

/// `[m] = max(0, m)`.
pub fn pos(m: f64) -> f64 {
    m.max(0.0)
}

/// `lambda(x, xi) = (1 + xi^2 + |x|^{2l})^{1/2l}`.
pub fn lambda(x: f64, xi: f64, l: f64) -> f64 {
    (1.0 + xi * xi + x.abs().powf(2.0 * l)).powf(0.5 / l)
}

/// `<x> = sqrt(1 + x^2)`.
pub fn japanese(x: f64) -> f64 {
    (1.0 + x * x).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymbolGrade {
    pub m1: f64,
    pub m2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradeOp {
    /// The `j`-th term of the Moyal expansion.
    ProductTerm(usize),
    Poisson,
    /// Remainder after the bracket expansion, three brackets deep.
    TripleBracket,
}

impl SymbolGrade {
    pub fn new(m1: f64, m2: f64) -> Self {
        SymbolGrade { m1, m2 }
    }

    /// `m1 + [m2]`.
    pub fn total(&self) -> f64 {
        self.m1 + pos(self.m2)
    }

    /// The coarser grade `(m1 + [m2], 0)` containing this class.
    pub fn coarsen(&self) -> SymbolGrade {
        SymbolGrade::new(self.total(), 0.0)
    }

    pub fn compose(&self, other: &SymbolGrade, op: GradeOp, l: f64) -> SymbolGrade {
        grade_compose(*self, *other, op, l)
    }
}

pub fn grade_compose(a: SymbolGrade, b: SymbolGrade, op: GradeOp, l: f64) -> SymbolGrade {
    let j = match op {
        GradeOp::ProductTerm(j) => j as f64,
        GradeOp::Poisson => 1.0,
        GradeOp::TripleBracket => 3.0,
    };
    SymbolGrade::new(a.m1 + b.m1 - l * j, a.m2 + b.m2 - j)
}

/// Effective order of a perturbation of grade `(beta1, beta2)`.
pub fn beta_tilde(beta1: f64, beta2: f64, l: f64, zero_average: bool) -> f64 {
    if zero_average && l > 1.0 {
        2.0 * beta1 + pos(beta2) + pos(beta2 - 1.0) - 2.0 * l + 1.0
    } else {
        beta1 + pos(beta2)
    }
}

/// Axis nodes: uniform with spacing `h` on `[-core, core]`, geometric beyond
/// with ratio `1 + h/core` up to `extent`.
pub fn symbol_axis(extent: f64, core: f64, h: f64) -> Vec<f64> {
    assert!(extent > 0.0 && h > 0.0 && core > 0.0);
    let core = core.min(extent);
    let n_core = (core / h).round().max(1.0) as usize;
    let step = core / n_core as f64;
    let mut pos_side = Vec::new();
    for i in 1..=n_core {
        pos_side.push(i as f64 * step);
    }
    let q = 1.0 + step / core;
    let mut x = core;
    while x < extent * (1.0 - 1e-12) {
        x = (x * q).min(extent);
        pos_side.push(x);
    }
    let mut nodes: Vec<f64> = pos_side.iter().rev().map(|v| -v).collect();
    nodes.push(0.0);
    nodes.extend(pos_side);
    nodes
}

/// Anything that can be evaluated at a phase-space point.
pub trait PhaseFunction: Sync {
    fn eval(&self, x: f64, xi: f64) -> f64;
}

impl<F: Fn(f64, f64) -> f64 + Sync> PhaseFunction for F {
    fn eval(&self, x: f64, xi: f64) -> f64 {
        self(x, xi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Xi,
}

/// A symbol sampled on a tensor grid, values stored x-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSymbol {
    pub x_nodes: Vec<f64>,
    pub xi_nodes: Vec<f64>,
    pub values: Vec<Complex64>,
    pub grade: SymbolGrade,
    pub l: f64,
    /// Fourier coefficients in the angles `phi`, keyed by mode.
    pub angle_modes: BTreeMap<Vec<i64>, Vec<Complex64>>,
}

fn check_nodes(nodes: &[f64], name: &str) -> Result<()> {
    if nodes.len() < 2 || nodes.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::GridMismatch(format!("{name} nodes must be strictly increasing")));
    }
    Ok(())
}

impl GridSymbol {
    pub fn new(
        x_nodes: Vec<f64>,
        xi_nodes: Vec<f64>,
        values: Vec<Complex64>,
        grade: SymbolGrade,
        l: f64,
    ) -> Result<Self> {
        check_nodes(&x_nodes, "x")?;
        check_nodes(&xi_nodes, "xi")?;
        if values.len() != x_nodes.len() * xi_nodes.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a {}x{} grid",
                values.len(),
                x_nodes.len(),
                xi_nodes.len()
            )));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::GridMismatch("non-finite symbol values".into()));
        }
        Ok(GridSymbol {
            x_nodes,
            xi_nodes,
            values,
            grade,
            l,
            angle_modes: BTreeMap::new(),
        })
    }

    pub fn from_complex_fn(
        x_nodes: Vec<f64>,
        xi_nodes: Vec<f64>,
        grade: SymbolGrade,
        l: f64,
        f: impl Fn(f64, f64) -> Complex64 + Sync,
    ) -> Result<Self> {
        let nxi = xi_nodes.len();
        let rows = par::map_range(x_nodes.len(), |i| {
            xi_nodes.iter().map(|&xi| f(x_nodes[i], xi)).collect::<Vec<_>>()
        });
        let mut values = Vec::with_capacity(x_nodes.len() * nxi);
        for r in rows {
            values.extend(r);
        }
        GridSymbol::new(x_nodes, xi_nodes, values, grade, l)
    }

    pub fn from_fn(
        x_nodes: Vec<f64>,
        xi_nodes: Vec<f64>,
        grade: SymbolGrade,
        l: f64,
        f: impl Fn(f64, f64) -> f64 + Sync,
    ) -> Result<Self> {
        Self::from_complex_fn(x_nodes, xi_nodes, grade, l, |x, xi| Complex64::new(f(x, xi), 0.0))
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.x_nodes.len(), self.xi_nodes.len())
    }

    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.values[i * self.xi_nodes.len() + j]
    }

    /// Same nodes and grade, new values.
    pub fn with_values(&self, values: Vec<Complex64>) -> Result<Self> {
        let mut out = GridSymbol::new(self.x_nodes.clone(), self.xi_nodes.clone(), values, self.grade, self.l)?;
        out.angle_modes = BTreeMap::new();
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64, f64, Complex64) -> Complex64) -> Self {
        let nxi = self.xi_nodes.len();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(idx, &v)| f(self.x_nodes[idx / nxi], self.xi_nodes[idx % nxi], v))
            .collect();
        GridSymbol { values, angle_modes: BTreeMap::new(), ..self.clone() }
    }

    pub fn same_grid(&self, other: &GridSymbol) -> bool {
        self.x_nodes == other.x_nodes && self.xi_nodes == other.xi_nodes
    }

    pub fn regraded(&self, grade: SymbolGrade) -> Self {
        GridSymbol { grade, ..self.clone() }
    }

    /// Derivative of order `order` along `axis` from 7-point Fornberg stencils.
    pub fn derivative(&self, axis: Axis, order: usize) -> Result<GridSymbol> {
        if order == 0 {
            return Ok(self.clone());
        }
        let (nx, nxi) = self.shape();
        let nodes = match axis {
            Axis::X => &self.x_nodes,
            Axis::Xi => &self.xi_nodes,
        };
        let width = 7.min(nodes.len());
        if nodes.len() < order + 2 {
            return Err(Error::Resolution(format!(
                "{} nodes cannot resolve a derivative of order {order}",
                nodes.len()
            )));
        }
        let stencils: Vec<(usize, Vec<f64>)> = (0..nodes.len())
            .map(|i| {
                let start = i.saturating_sub(width / 2).min(nodes.len() - width);
                (start, fornberg_weights(nodes[i], &nodes[start..start + width], order))
            })
            .collect();
        let values: Vec<Complex64> = match axis {
            Axis::X => {
                let rows = par::map_range(nx, |i| {
                    let (start, w) = &stencils[i];
                    (0..nxi)
                        .map(|j| {
                            w.iter()
                                .enumerate()
                                .map(|(k, &c)| self.values[(start + k) * nxi + j] * c)
                                .sum::<Complex64>()
                        })
                        .collect::<Vec<_>>()
                });
                rows.concat()
            }
            Axis::Xi => {
                let rows = par::map_range(nx, |i| {
                    let row = &self.values[i * nxi..(i + 1) * nxi];
                    stencils
                        .iter()
                        .map(|(start, w)| w.iter().enumerate().map(|(k, &c)| row[start + k] * c).sum::<Complex64>())
                        .collect::<Vec<_>>()
                });
                rows.concat()
            }
        };
        let grade = match axis {
            Axis::X => SymbolGrade::new(self.grade.m1, self.grade.m2 - order as f64),
            Axis::Xi => SymbolGrade::new(self.grade.m1 - self.l * order as f64, self.grade.m2),
        };
        let mut out = GridSymbol::new(self.x_nodes.clone(), self.xi_nodes.clone(), values, grade, self.l)?;
        out.angle_modes = BTreeMap::new();
        Ok(out)
    }

    /// `d_xi^{k1} d_x^{k2}`.
    pub fn mixed_derivative(&self, k1: usize, k2: usize) -> Result<GridSymbol> {
        self.derivative(Axis::Xi, k1)?.derivative(Axis::X, k2)
    }

    /// Tensor Lagrange interpolation of degree 5 of the real part.
    pub fn interpolate(&self, x: f64, xi: f64) -> f64 {
        let (ix, wx) = lagrange_stencil(&self.x_nodes, x);
        let (ij, wj) = lagrange_stencil(&self.xi_nodes, xi);
        let nxi = self.xi_nodes.len();
        let mut acc = 0.0;
        for (a, ca) in wx.iter().enumerate() {
            for (b, cb) in wj.iter().enumerate() {
                acc += ca * cb * self.values[(ix + a) * nxi + ij + b].re;
            }
        }
        acc
    }

    /// Tensor Lagrange interpolation of degree 5 of the complex values.
    pub fn interpolate_complex(&self, x: f64, xi: f64) -> Complex64 {
        let (ix, wx) = lagrange_stencil(&self.x_nodes, x);
        let (ij, wj) = lagrange_stencil(&self.xi_nodes, xi);
        let nxi = self.xi_nodes.len();
        let mut acc = Complex64::new(0.0, 0.0);
        for (a, ca) in wx.iter().enumerate() {
            for (b, cb) in wj.iter().enumerate() {
                acc += self.values[(ix + a) * nxi + ij + b] * (ca * cb);
            }
        }
        acc
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(&GridSymbolJson::from(self)).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: GridSymbolJson = serde_json::from_str(s).map_err(|e| Error::Io(e.to_string()))?;
        j.try_into()
    }
}

impl PhaseFunction for GridSymbol {
    fn eval(&self, x: f64, xi: f64) -> f64 {
        self.interpolate(x, xi)
    }
}

fn lagrange_stencil(nodes: &[f64], z: f64) -> (usize, Vec<f64>) {
    let width = 6.min(nodes.len());
    let pos = nodes.partition_point(|&v| v < z);
    let start = pos.saturating_sub(width / 2).min(nodes.len() - width);
    (start, fornberg_weights(z, &nodes[start..start + width], 0))
}

#[derive(Serialize, Deserialize)]
struct ModeJson {
    k: Vec<i64>,
    re: Vec<f64>,
    im: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GridSymbolJson {
    x_nodes: Vec<f64>,
    xi_nodes: Vec<f64>,
    re: Vec<f64>,
    im: Vec<f64>,
    grade: SymbolGrade,
    l: f64,
    #[serde(default)]
    angle_modes: Vec<ModeJson>,
}

impl From<&GridSymbol> for GridSymbolJson {
    fn from(g: &GridSymbol) -> Self {
        GridSymbolJson {
            x_nodes: g.x_nodes.clone(),
            xi_nodes: g.xi_nodes.clone(),
            re: g.values.iter().map(|v| v.re).collect(),
            im: g.values.iter().map(|v| v.im).collect(),
            grade: g.grade,
            l: g.l,
            angle_modes: g
                .angle_modes
                .iter()
                .map(|(k, v)| ModeJson {
                    k: k.clone(),
                    re: v.iter().map(|c| c.re).collect(),
                    im: v.iter().map(|c| c.im).collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<GridSymbolJson> for GridSymbol {
    type Error = Error;

    fn try_from(j: GridSymbolJson) -> Result<Self> {
        if j.re.len() != j.im.len() {
            return Err(Error::GridMismatch("re/im length mismatch".into()));
        }
        let values = j.re.iter().zip(&j.im).map(|(&a, &b)| Complex64::new(a, b)).collect();
        let mut g = GridSymbol::new(j.x_nodes, j.xi_nodes, values, j.grade, j.l)?;
        for m in j.angle_modes {
            if m.re.len() != g.values.len() || m.im.len() != g.values.len() {
                return Err(Error::GridMismatch("angle mode shape mismatch".into()));
            }
            g.angle_modes
                .insert(m.k, m.re.iter().zip(&m.im).map(|(&a, &b)| Complex64::new(a, b)).collect());
        }
        Ok(g)
    }
}

/// Discrete `S^{m1,m2}_N` seminorm: the sup over the grid interior and
/// `k1 + k2 <= N` of `|d_xi^{k1} d_x^{k2} g| / (lambda^{m1 - l k1} <x>^{m2 - k2})`.
pub fn class_norm_estimate(g: &GridSymbol, grade: SymbolGrade, n: usize) -> Result<f64> {
    if n > 4 {
        return Err(Error::UnsupportedOrder(n));
    }
    let (nx, nxi) = g.shape();
    let need = 2 * n + 7;
    if nx < need || nxi < need {
        return Err(Error::Resolution(format!(
            "a {nx}x{nxi} grid is too coarse for seminorms of order {n} (need {need} nodes per axis)"
        )));
    }
    let l = g.l;
    let mut best: f64 = 0.0;
    for k1 in 0..=n {
        let dxi = g.derivative(Axis::Xi, k1)?;
        for k2 in 0..=(n - k1) {
            let d = dxi.derivative(Axis::X, k2)?;
            // skip rows/columns touched by one-sided stencils of repeated differences
            let skip = 3 * (k1 + k2).min(2);
            let rows = par::map_range(nx, |i| {
                if i < skip || i + skip >= nx {
                    return 0.0;
                }
                let x = g.x_nodes[i];
                let mut m: f64 = 0.0;
                for j in skip..nxi - skip {
                    let xi = g.xi_nodes[j];
                    let w = lambda(x, xi, l).powf(grade.m1 - l * k1 as f64) * japanese(x).powf(grade.m2 - k2 as f64);
                    m = m.max(d.at(i, j).norm() / w);
                }
                m
            });
            best = rows.into_iter().fold(best, f64::max);
        }
    }
    Ok(best)
}

/// Per-shell maxima of `|g|` over dyadic `lambda` shells: `(lambda at argmax, max)`.
pub fn shell_maxima(g: &GridSymbol) -> Vec<(i32, f64, f64, usize)> {
    let nxi = g.xi_nodes.len();
    let mut shells: BTreeMap<i32, (f64, f64, usize)> = BTreeMap::new();
    for (idx, v) in g.values.iter().enumerate() {
        let lam = lambda(g.x_nodes[idx / nxi], g.xi_nodes[idx % nxi], g.l);
        let j = lam.log2().floor() as i32;
        let e = shells.entry(j).or_insert((lam, 0.0, 0));
        let a = v.norm();
        e.2 += 1;
        if a > e.1 {
            e.0 = lam;
            e.1 = a;
        }
    }
    shells.into_iter().map(|(j, (lam, m, c))| (j, lam, m, c)).collect()
}

const FIT_FLOOR: f64 = 1e-300;

/// Least-squares slope of `log(shell max |g|)` against `log(lambda)` over dyadic
/// shells holding at least four samples. Leading shells where `g` vanishes are
/// skipped; vanishing shells after the first nonzero one enter at a floor value.
pub fn order_fit(g: &GridSymbol) -> Result<f64> {
    order_fit_above(g, 1.0)
}

/// [`order_fit`] restricted to shells with `lambda >= lambda_min`.
pub fn order_fit_above(g: &GridSymbol, lambda_min: f64) -> Result<f64> {
    let shells: Vec<(f64, f64)> = shell_maxima(g)
        .into_iter()
        .filter(|s| s.3 >= 4 && 2f64.powi(s.0) >= lambda_min * (1.0 - 1e-12))
        .map(|s| (s.1, s.2))
        .skip_while(|s| s.1 <= 0.0)
        .collect();
    fit_shells(&shells)
}

pub(crate) fn fit_shells(shells: &[(f64, f64)]) -> Result<f64> {
    if shells.len() < 5 {
        return Err(Error::InsufficientRange { populated: shells.len(), required: 5 });
    }
    let pts: Vec<(f64, f64)> = shells.iter().map(|&(lam, m)| (lam.ln(), m.max(FIT_FLOOR).ln())).collect();
    Ok(least_squares_slope(&pts))
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    linear_fit(pts).0
}

/// `(slope, intercept, r_squared)`.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

/// `d^k/dM^k int_{-1}^{1} <M y>^m / sqrt(1 - |y|^{2l}) dy`.
pub fn scaled_profile_derivative(m: f64, l: f64, big_m: f64, k: usize) -> Result<f64> {
    if k > 2 {
        return Err(Error::UnsupportedOrder(k));
    }
    let dw = |x: f64| -> f64 {
        let u = 1.0 + x * x;
        match k {
            0 => u.powf(0.5 * m),
            1 => m * x * u.powf(0.5 * m - 1.0),
            _ => m * u.powf(0.5 * m - 1.0) + m * (m - 2.0) * x * x * u.powf(0.5 * m - 2.0),
        }
    };
    // y = sin(theta): dy / sqrt(1 - |y|^{2l}) = dtheta / sqrt(R), R = (1 - |y|^{2l})/(1 - y^2)
    let f = |t: f64| {
        let y = t.sin();
        let c2 = t.cos().powi(2);
        let r = if c2 < 1e-300 { l } else { (1.0 - y.abs().powf(2.0 * l)) / c2 };
        dw(big_m * y) * y.powi(k as i32) / r.sqrt()
    };
    let half = std::f64::consts::FRAC_PI_2;
    Ok(adaptive_integrate(f, -half, 0.0, 1e-12)? + adaptive_integrate(f, 0.0, half, 1e-12)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(extent: f64) -> (Vec<f64>, Vec<f64>) {
        (symbol_axis(extent, 4.0, 0.25), symbol_axis(extent * extent, 4.0, 0.25))
    }

    #[test]
    fn grade_examples() {
        let p = grade_compose(SymbolGrade::new(1.0, 0.0), SymbolGrade::new(0.0, 1.5), GradeOp::Poisson, 2.0);
        assert_eq!(p, SymbolGrade::new(-1.0, 0.5));
        let t = grade_compose(SymbolGrade::new(1.0, 0.0), SymbolGrade::new(1.0, 0.0), GradeOp::TripleBracket, 2.0);
        assert_eq!(t, SymbolGrade::new(-4.0, -3.0));
        let a = SymbolGrade::new(0.3, -0.7);
        let b = SymbolGrade::new(1.1, 2.0);
        let c = grade_compose(a, b, GradeOp::ProductTerm(0), 2.0);
        assert!((c.m1 - 1.4).abs() < 1e-15 && (c.m2 - 1.3).abs() < 1e-15);
        assert_eq!(SymbolGrade::new(1.0, 0.5).coarsen(), SymbolGrade::new(1.5, 0.0));
        assert_eq!(SymbolGrade::new(1.0, -0.5).total(), 1.0);
    }

    #[test]
    fn beta_tilde_branches() {
        assert_eq!(beta_tilde(1.0, 0.5, 2.0, true), -0.5);
        assert_eq!(beta_tilde(0.0, 1.5, 2.0, false), 1.5);
        assert_eq!(beta_tilde(0.0, 0.5, 1.0, true), 0.5);
    }

    #[test]
    fn axis_is_symmetric_and_increasing() {
        let a = symbol_axis(100.0, 4.0, 0.1);
        assert!(a.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(a[0], -100.0);
        assert_eq!(*a.last().unwrap(), 100.0);
        for (u, v) in a.iter().zip(a.iter().rev()) {
            assert!((u + v).abs() < 1e-12);
        }
    }

    #[test]
    fn derivatives_on_nonuniform_nodes() {
        let (xs, xis) = (symbol_axis(20.0, 4.0, 0.1), symbol_axis(20.0, 4.0, 0.1));
        let g = GridSymbol::from_fn(xs, xis, SymbolGrade::new(0.0, 1.5), 2.0, |x, xi| japanese(x).powf(1.5) * xi).unwrap();
        let d = g.derivative(Axis::X, 1).unwrap();
        let (nx, nxi) = g.shape();
        for i in (3..nx - 3).step_by(17) {
            for j in (3..nxi - 3).step_by(13) {
                let x = g.x_nodes[i];
                let xi = g.xi_nodes[j];
                let exact = 1.5 * x * japanese(x).powf(-0.5) * xi;
                let err = (d.at(i, j).re - exact).abs();
                assert!(err < 1e-4 * (1.0 + exact.abs()), "x={x} xi={xi} err={err} exact={exact}");
            }
        }
        assert_eq!(d.grade, SymbolGrade::new(0.0, 0.5));
        assert!((g.interpolate(1.234, -2.5) - japanese(1.234).powf(1.5) * -2.5).abs() < 1e-7);
    }

    #[test]
    fn lambda_power_norm_is_extent_independent() {
        let l = 2.0;
        let mut norms = Vec::new();
        for extent in [20.0, 40.0, 80.0] {
            let (xs, xis) = grid(extent);
            let g = GridSymbol::from_fn(xs, xis, SymbolGrade::new(1.5, 0.0), l, |x, xi| lambda(x, xi, l).powf(1.5)).unwrap();
            norms.push(class_norm_estimate(&g, SymbolGrade::new(1.5, 0.0), 2).unwrap());
        }
        assert!(norms.iter().all(|n| n.is_finite()));
        assert!(norms[2] <= norms[0] * 1.1, "{norms:?}");
    }

    #[test]
    fn japanese_power_norm_bounded_and_cosine_unbounded() {
        let l = 2.0;
        let mut jap = Vec::new();
        let mut cosine = Vec::new();
        for extent in [20.0, 40.0, 80.0] {
            let xs = symbol_axis(extent, 4.0, 0.05);
            let xis = symbol_axis(10.0, 4.0, 0.5);
            let g = GridSymbol::from_fn(xs.clone(), xis.clone(), SymbolGrade::new(0.0, 1.5), l, |x, _| japanese(x).powf(1.5)).unwrap();
            jap.push(class_norm_estimate(&g, SymbolGrade::new(0.0, 1.5), 2).unwrap());
            let c = GridSymbol::from_fn(xs, xis, SymbolGrade::new(0.0, -0.5), l, |x, _| x.cos()).unwrap();
            cosine.push(class_norm_estimate(&c, SymbolGrade::new(0.0, -0.5), 1).unwrap());
        }
        assert!(jap[2] <= jap[0] * 1.1, "{jap:?}");
        assert!(cosine[1] > 1.3 * cosine[0] && cosine[2] > 1.3 * cosine[1], "{cosine:?}");
    }

    #[test]
    fn resolution_error() {
        let g = GridSymbol::from_fn(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.0], SymbolGrade::new(0.0, 0.0), 2.0, |_, _| 1.0).unwrap();
        assert!(matches!(class_norm_estimate(&g, g.grade, 2), Err(Error::Resolution(_))));
    }

    #[test]
    fn order_fit_examples() {
        let l = 2.0;
        let (xs, xis) = grid(400.0);
        let g = GridSymbol::from_fn(xs.clone(), xis.clone(), SymbolGrade::new(3.0, 0.0), l, |x, xi| lambda(x, xi, l).powi(3)).unwrap();
        assert!((order_fit(&g).unwrap() - 3.0).abs() < 0.02);
        let j = GridSymbol::from_fn(xs, xis, SymbolGrade::new(0.0, 1.5), l, |x, _| japanese(x).powf(1.5)).unwrap();
        let fit = order_fit(&j).unwrap();
        assert!((fit - 1.5).abs() < 0.05, "{fit}");
        assert_eq!(order_fit(&j.regraded(j.grade.coarsen())).unwrap(), fit);
    }

    #[test]
    fn order_fit_needs_range() {
        let xs = symbol_axis(2.0, 1.0, 0.1);
        let g = GridSymbol::from_fn(xs.clone(), xs, SymbolGrade::new(0.0, 0.0), 2.0, |_, _| 1.0).unwrap();
        assert!(matches!(order_fit(&g), Err(Error::InsufficientRange { .. })));
    }

    #[test]
    fn json_round_trip() {
        let xs = vec![-1.0, 0.0, 2.0];
        let mut g = GridSymbol::from_complex_fn(xs.clone(), xs, SymbolGrade::new(0.5, -1.0), 2.0, |x, xi| Complex64::new(x, xi)).unwrap();
        g.angle_modes.insert(vec![1], g.values.clone());
        let back = GridSymbol::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn profile_integral_at_zero_scale() {
        // M = 0: int dy / sqrt(1 - y^4) = T(1) of the quartic
        let v = scaled_profile_derivative(1.5, 2.0, 0.0, 0).unwrap();
        assert!((v - 2.62205755429212).abs() < 1e-9, "{v}");
    }
}

//! Orbit averages and the homological equations
//! `p + {h0; chi} = <p>`, its rescaled variant, the torus equation
//! `-omega . d_phi chi = p - pbar` and the harmonic (l = 1) equation.
//!
//! Bracket convention: `{a; b} = -d_xi a d_x b + d_xi b d_x a`, so that
//! `{h0; chi} = -d chi/dt` along the flow of `h0`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;

use crate::classical::{flow, period, FlowPoint, OrbitGeometry};
use crate::diophantine::l1_norm;
use crate::error::{Error, Result};
use crate::par;
use crate::potentials::PotentialModel;
use crate::quadrature::{chebyshev_interpolate, chebyshev_nodes, fft, ifft, trig_eval, wavenumber, GaussRule};
use crate::symbol_grid::{pos, Axis, GridSymbol, PhaseFunction, SymbolGrade};

/// Smooth cutoff: 0 for `E <= 1`, 1 for `E >= 2`.
pub fn eta(e: f64) -> f64 {
    let psi = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
    let a = psi(e - 1.0);
    let b = psi(2.0 - e);
    if a + b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

/// Uniform samples of one orbit in the orbit angle `theta in [-pi/2, 3pi/2)`.
#[derive(Debug, Clone)]
pub struct OrbitSamples {
    pub energy: f64,
    pub q_m: f64,
    pub period: f64,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    /// `dt/dtheta` at each sample.
    pub w: Vec<f64>,
}

pub const THETA0: f64 = -0.5 * PI;

impl OrbitSamples {
    pub fn new(model: &PotentialModel, energy: f64, m: usize) -> Result<Self> {
        let geo = OrbitGeometry::new(model, energy)?;
        let h = 2.0 * PI / m as f64;
        let mut x = Vec::with_capacity(m);
        let mut xi = Vec::with_capacity(m);
        let mut w = Vec::with_capacity(m);
        for j in 0..m {
            let s = geo.sample(THETA0 + h * j as f64);
            x.push(s.x);
            xi.push(s.xi);
            w.push(s.dt_dtheta);
        }
        let period = h * w.iter().sum::<f64>();
        Ok(OrbitSamples { energy, q_m: geo.q_m, period, x, xi, w })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Time-weighted mean of sampled values.
    pub fn average(&self, values: &[f64]) -> f64 {
        let num: f64 = values.iter().zip(&self.w).map(|(v, w)| v * w).sum();
        num / self.w.iter().sum::<f64>()
    }

    pub fn angle_of(&self, x: f64, xi: f64) -> f64 {
        let a = (x / self.q_m).clamp(-1.0, 1.0).asin();
        if xi >= 0.0 {
            a
        } else {
            PI - a
        }
    }
}

/// Orbit samples needed to resolve structure on the scale `1/q_M` in `theta`.
pub fn default_orbit_resolution(q_m: f64) -> usize {
    let want = (64.0 * q_m).max(256.0).min(32768.0);
    (want as usize).next_power_of_two()
}

/// `<p>(E)`, the time average of `p` over the orbit of energy `E`.
pub fn orbit_average(p: &impl PhaseFunction, model: &PotentialModel, energy: f64) -> Result<f64> {
    let geo = OrbitGeometry::new(model, energy)?;
    let mut m = default_orbit_resolution(geo.q_m);
    let eval = |m: usize| -> Result<f64> {
        let o = OrbitSamples::new(model, energy, m)?;
        let vals: Vec<f64> = o.x.iter().zip(&o.xi).map(|(&x, &xi)| p.eval(x, xi)).collect();
        Ok(o.average(&vals))
    };
    let mut prev = eval(m)?;
    for _ in 0..6 {
        m *= 2;
        let next = eval(m)?;
        if (next - prev).abs() <= 1e-12 * next.abs().max(1e-300) {
            return Ok(next);
        }
        prev = next;
    }
    Ok(prev)
}

/// Time average of `p` along the integrated flow from `start` over one period,
/// sampled at `n` equally spaced times.
pub fn time_average_along_flow(
    p: &impl PhaseFunction,
    model: &PotentialModel,
    start: FlowPoint,
    n: usize,
) -> Result<f64> {
    let t = period(model, start.energy(model))?;
    let mut z = start;
    let mut acc = 0.0;
    for _ in 0..n {
        acc += p.eval(z.x, z.xi);
        z = flow(model, z, t / n as f64)?;
    }
    Ok(acc / n as f64)
}

/// A function of `h0` alone, tabulated on Chebyshev nodes in `ln E`.
#[derive(Debug, Clone)]
pub struct AveragedSymbol {
    pub model: PotentialModel,
    pub e_nodes: Vec<f64>,
    pub values: Vec<f64>,
    s_nodes: Vec<f64>,
}

impl AveragedSymbol {
    pub fn build(
        p: &impl PhaseFunction,
        model: &PotentialModel,
        e_min: f64,
        e_max: f64,
        n: usize,
    ) -> Result<Self> {
        if !(e_min > model.v0() && e_max > e_min) {
            return Err(Error::Contract(format!("bad energy range [{e_min}, {e_max}]")));
        }
        let s_nodes = chebyshev_nodes(n, e_min.ln(), e_max.ln());
        let e_nodes: Vec<f64> = s_nodes.iter().map(|s| s.exp()).collect();
        let values = par::map_slice(&e_nodes, |&e| orbit_average(p, model, e))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(AveragedSymbol { model: model.clone(), e_nodes, values, s_nodes })
    }

    pub fn at_energy(&self, e: f64) -> f64 {
        chebyshev_interpolate(&self.s_nodes, &self.values, e.ln())
    }
}

impl PhaseFunction for AveragedSymbol {
    fn eval(&self, x: f64, xi: f64) -> f64 {
        self.at_energy(self.model.h0(x, xi))
    }
}

/// A solved homological equation sampled on a phase-space grid.
#[derive(Debug, Clone)]
pub struct HomologicalSolution {
    pub chi: GridSymbol,
    pub residual_sup: f64,
    pub mean_free: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct HomologicalOptions {
    /// Residual tolerance relative to `sup |p|` on the validation region.
    pub tolerance: f64,
    /// Orbit samples; `None` picks [`default_orbit_resolution`].
    pub orbit_samples: Option<usize>,
    /// Grid nodes excluded at each edge when measuring residuals.
    pub margin: usize,
}

impl Default for HomologicalOptions {
    fn default() -> Self {
        HomologicalOptions { tolerance: 1e-4, orbit_samples: None, margin: 3 }
    }
}

/// `chi` on one orbit, as DFT coefficients in `theta`, plus `<p>`.
#[derive(Debug, Clone)]
pub struct OrbitChi {
    pub orbit: OrbitSamples,
    pub coeffs: Vec<Complex64>,
    pub average: f64,
}

impl OrbitChi {
    /// Solves `d chi/dt = p - <p>` on the orbit with `chi` of zero time average.
    pub fn solve(orbit: OrbitSamples, p_values: &[f64]) -> Self {
        let m = orbit.len();
        let average = orbit.average(p_values);
        let mut c: Vec<Complex64> = p_values
            .iter()
            .zip(&orbit.w)
            .map(|(p, w)| Complex64::new((p - average) * w, 0.0))
            .collect();
        fft(&mut c);
        c[0] = Complex64::new(0.0, 0.0);
        for (j, v) in c.iter_mut().enumerate().skip(1) {
            if m % 2 == 0 && j == m / 2 {
                *v = Complex64::new(0.0, 0.0);
            } else {
                *v /= Complex64::new(0.0, wavenumber(j, m) as f64);
            }
        }
        let mut samples = c.clone();
        ifft(&mut samples);
        let mean_shift = orbit.average(&samples.iter().map(|v| v.re).collect::<Vec<_>>());
        c[0] -= Complex64::new(mean_shift * m as f64, 0.0);
        OrbitChi { orbit, coeffs: c, average }
    }

    pub fn at_angle(&self, theta: f64) -> f64 {
        trig_eval(&self.coeffs, THETA0, 2.0 * PI, theta)
    }

    pub fn values(&self) -> Vec<f64> {
        let mut s = self.coeffs.clone();
        ifft(&mut s);
        s.iter().map(|v| v.re).collect()
    }
}

/// `chi(x, xi)` for the autonomous equation at a single phase-space point.
pub fn chi_at_point(
    p: &impl PhaseFunction,
    model: &PotentialModel,
    x: f64,
    xi: f64,
    orbit_samples: Option<usize>,
) -> Result<f64> {
    let e = model.h0(x, xi);
    if e <= model.v0() * (1.0 + 1e-14) + 1e-300 {
        return Ok(0.0);
    }
    let geo = OrbitGeometry::new(model, e)?;
    let m = orbit_samples.unwrap_or_else(|| default_orbit_resolution(geo.q_m));
    let orbit = OrbitSamples::new(model, e, m)?;
    let vals: Vec<f64> = orbit.x.iter().zip(&orbit.xi).map(|(&a, &b)| p.eval(a, b)).collect();
    let theta = orbit.angle_of(x, xi);
    Ok(OrbitChi::solve(orbit, &vals).at_angle(theta))
}

/// The time-integral form `(1/T) int_0^T t (p - <p>)(Phi^t z) dt` minus its
/// orbit mean, evaluated with the integrated flow. Slow; used for validation.
pub fn chi_time_integral(p: &impl PhaseFunction, model: &PotentialModel, x: f64, xi: f64, n: usize) -> Result<f64> {
    let start = FlowPoint::new(x, xi);
    let t = period(model, start.energy(model))?;
    let dt = t / n as f64;
    let mut z = start;
    let mut vals = Vec::with_capacity(n);
    for _ in 0..n {
        vals.push(p.eval(z.x, z.xi));
        z = flow(model, z, dt)?;
    }
    let avg = vals.iter().sum::<f64>() / n as f64;
    let check: Vec<f64> = vals.iter().map(|v| v - avg).collect();
    // chi(Phi^s z) for s = j dt is (1/T) int_0^T t pcheck(Phi^{t+s} z) dt; its
    // orbit mean is removed using the same samples
    let moment = |shift: usize| -> f64 {
        // t * f(t) is not periodic: use the trapezoid rule with the endpoint
        // correction f(T) = f(0)
        let mut acc = 0.0;
        for j in 0..n {
            acc += j as f64 * dt * check[(j + shift) % n];
        }
        acc += 0.5 * t * check[shift % n];
        acc * dt / t
    };
    let chi0 = moment(0);
    let mean = (0..n).map(moment).sum::<f64>() / n as f64;
    Ok(chi0 - mean)
}

fn sample_on_grid(
    x_nodes: &[f64],
    xi_nodes: &[f64],
    f: impl Fn(f64, f64) -> Result<f64> + Sync,
) -> Result<Vec<Complex64>> {
    let rows = par::map_range(x_nodes.len(), |i| {
        xi_nodes
            .iter()
            .map(|&xi| f(x_nodes[i], xi).map(|v| Complex64::new(v, 0.0)))
            .collect::<Result<Vec<_>>>()
    });
    let mut out = Vec::with_capacity(x_nodes.len() * xi_nodes.len());
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

fn solve_on_grid(
    model: &PotentialModel,
    p: &(impl PhaseFunction + ?Sized),
    x_nodes: &[f64],
    xi_nodes: &[f64],
    orbit_samples: Option<usize>,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    struct Dyn<'a, P: ?Sized>(&'a P);
    impl<P: PhaseFunction + ?Sized> PhaseFunction for Dyn<'_, P> {
        fn eval(&self, x: f64, xi: f64) -> f64 {
            self.0.eval(x, xi)
        }
    }
    let pf = Dyn(p);
    let rows = par::map_range(x_nodes.len(), |i| -> Result<Vec<(Complex64, Complex64)>> {
        let x = x_nodes[i];
        xi_nodes
            .iter()
            .map(|&xi| {
                let e = model.h0(x, xi);
                if e <= model.v0() * (1.0 + 1e-14) + 1e-300 {
                    let v = pf.eval(x, xi);
                    return Ok((Complex64::new(0.0, 0.0), Complex64::new(v, 0.0)));
                }
                let geo = OrbitGeometry::new(model, e)?;
                let m = orbit_samples.unwrap_or_else(|| default_orbit_resolution(geo.q_m));
                let orbit = OrbitSamples::new(model, e, m)?;
                let vals: Vec<f64> = orbit.x.iter().zip(&orbit.xi).map(|(&a, &b)| pf.eval(a, b)).collect();
                let theta = orbit.angle_of(x, xi);
                let sol = OrbitChi::solve(orbit, &vals);
                Ok((Complex64::new(sol.at_angle(theta), 0.0), Complex64::new(sol.average, 0.0)))
            })
            .collect()
    });
    let mut chi = Vec::with_capacity(x_nodes.len() * xi_nodes.len());
    let mut avg = Vec::with_capacity(chi.capacity());
    for r in rows {
        for (c, a) in r? {
            chi.push(c);
            avg.push(a);
        }
    }
    Ok((chi, avg))
}

/// Which equation a residual refers to.
#[derive(Clone, Copy)]
pub enum Equation<'a> {
    /// `p + {h0; chi} = avg`.
    Autonomous,
    /// `p + (1 + eps f'(h0)) {h0; chi} = avg`.
    Rescaled { factor: &'a (dyn Fn(f64) -> f64 + Sync) },
    /// `p + {h0; chi} - i s chi = avg` for one angle mode with `s = omega . k`.
    Mode { shift: f64 },
}

/// Sup over the grid interior of the equation's defect, brackets by finite differences.
pub fn residual_check(
    model: &PotentialModel,
    p: &GridSymbol,
    chi: &GridSymbol,
    avg: &GridSymbol,
    equation: Equation<'_>,
    margin: usize,
) -> Result<f64> {
    if !(p.same_grid(chi) && p.same_grid(avg)) {
        return Err(Error::GridMismatch("p, chi and avg must share one grid".into()));
    }
    let dx = chi.derivative(Axis::X, 1)?;
    let dxi = chi.derivative(Axis::Xi, 1)?;
    let (nx, nxi) = chi.shape();
    if nx <= 2 * margin || nxi <= 2 * margin {
        return Err(Error::Resolution("grid smaller than the residual margin".into()));
    }
    let rows = par::map_range(nx, |i| {
        if i < margin || i + margin >= nx {
            return 0.0;
        }
        let x = chi.x_nodes[i];
        let dv = model.derivative_unchecked(x, 1);
        let mut worst: f64 = 0.0;
        for j in margin..nxi - margin {
            let xi = chi.xi_nodes[j];
            let bracket = -2.0 * xi * dx.at(i, j) + dv * dxi.at(i, j);
            let defect = match equation {
                Equation::Autonomous => p.at(i, j) + bracket - avg.at(i, j),
                Equation::Rescaled { factor } => p.at(i, j) + bracket * factor(model.h0(x, xi)) - avg.at(i, j),
                Equation::Mode { shift } => {
                    p.at(i, j) + bracket - Complex64::new(0.0, shift) * chi.at(i, j) - avg.at(i, j)
                }
            };
            worst = worst.max(defect.norm());
        }
        worst
    });
    Ok(rows.into_iter().fold(0.0, f64::max))
}

fn interior_sup(g: &GridSymbol, margin: usize) -> f64 {
    let (nx, nxi) = g.shape();
    let mut m: f64 = 0.0;
    for i in margin..nx.saturating_sub(margin) {
        for j in margin..nxi.saturating_sub(margin) {
            m = m.max(g.at(i, j).norm());
        }
    }
    m
}

/// Grade of the solution of an autonomous equation with right side of grade `g`.
pub fn chi_grade(g: SymbolGrade, l: f64) -> SymbolGrade {
    SymbolGrade::new(g.m1 + pos(g.m2) - l + 1.0, 0.0)
}

/// Solves `p + {h0; chi} = <p>` on the grid `x_nodes x xi_nodes`.
pub fn chi_autonomous(
    model: &PotentialModel,
    p: &(impl PhaseFunction + ?Sized),
    p_grade: SymbolGrade,
    x_nodes: &[f64],
    xi_nodes: &[f64],
    opts: HomologicalOptions,
) -> Result<HomologicalSolution> {
    chi_rescaled(model, p, p_grade, x_nodes, xi_nodes, &|_| 0.0, 0.0, opts)
}

/// Solves `p + {h0 + eps f(h0); chi} = <p>`, i.e. the autonomous solution
/// divided by `1 + eps f'(h0)`.
#[allow(clippy::too_many_arguments)]
pub fn chi_rescaled(
    model: &PotentialModel,
    p: &(impl PhaseFunction + ?Sized),
    p_grade: SymbolGrade,
    x_nodes: &[f64],
    xi_nodes: &[f64],
    f_prime: &(dyn Fn(f64) -> f64 + Sync),
    epsilon: f64,
    opts: HomologicalOptions,
) -> Result<HomologicalSolution> {
    let l = model.l();
    let factor = |e: f64| 1.0 + epsilon * f_prime(e);
    for &x in x_nodes {
        for &xi in xi_nodes {
            let f = factor(model.h0(x, xi));
            if !(f.abs() >= 0.5) {
                return Err(Error::RescalingSingular(f));
            }
        }
    }
    let (chi0, avg) = solve_on_grid(model, p, x_nodes, xi_nodes, opts.orbit_samples)?;
    let nxi = xi_nodes.len();
    let chi_vals: Vec<Complex64> = chi0
        .iter()
        .enumerate()
        .map(|(idx, c)| c / factor(model.h0(x_nodes[idx / nxi], xi_nodes[idx % nxi])))
        .collect();
    let chi = GridSymbol::new(x_nodes.to_vec(), xi_nodes.to_vec(), chi_vals, chi_grade(p_grade, l), l)?;
    let p_grid = GridSymbol::new(
        x_nodes.to_vec(),
        xi_nodes.to_vec(),
        sample_on_grid(x_nodes, xi_nodes, |x, xi| Ok(p.eval(x, xi)))?,
        p_grade,
        l,
    )?;
    let avg_grid = p_grid.with_values(avg)?;
    let residual = if epsilon == 0.0 {
        residual_check(model, &p_grid, &chi, &avg_grid, Equation::Autonomous, opts.margin)?
    } else {
        residual_check(model, &p_grid, &chi, &avg_grid, Equation::Rescaled { factor: &factor }, opts.margin)?
    };
    let scale = interior_sup(&p_grid, opts.margin).max(1e-300);
    if residual > opts.tolerance * scale {
        return Err(Error::NonConvergence { residual, tolerance: opts.tolerance * scale });
    }
    Ok(HomologicalSolution { chi, residual_sup: residual, mean_free: true })
}

/// Solution of the torus equation in Fourier modes.
#[derive(Debug, Clone)]
pub struct TorusSolution {
    pub modes: BTreeMap<Vec<i64>, Vec<Complex64>>,
    pub residual_sup: f64,
    /// Sum of mode magnitudes beyond the cutoff, which are not solved for.
    pub dropped_tail: f64,
}

impl TorusSolution {
    pub fn eval(&self, phi: &[f64], component: usize) -> Complex64 {
        self.modes
            .iter()
            .map(|(k, v)| {
                let a: f64 = k.iter().zip(phi).map(|(&k, &p)| k as f64 * p).sum();
                v[component] * Complex64::from_polar(1.0, a)
            })
            .sum()
    }
}

pub const DEFAULT_MODE_CUTOFF: i64 = 32;

fn dot(k: &[i64], omega: &[f64]) -> f64 {
    k.iter().zip(omega).map(|(&k, &w)| k as f64 * w).sum()
}

/// Solves `-omega . d_phi chi = p - pbar` mode by mode; `chi` has no zero mode.
pub fn chi_torus(
    p_modes: &BTreeMap<Vec<i64>, Vec<Complex64>>,
    omega: &[f64],
    gamma: f64,
    tau: f64,
    cutoff: i64,
) -> Result<TorusSolution> {
    let mut modes = BTreeMap::new();
    let mut residual: f64 = 0.0;
    let mut tail = 0.0;
    for (k, pk) in p_modes {
        if k.len() != omega.len() {
            return Err(Error::GridMismatch(format!("mode {k:?} vs {} frequencies", omega.len())));
        }
        let norm = l1_norm(k);
        if norm == 0 {
            continue;
        }
        if norm > cutoff {
            tail += pk.iter().map(|v| v.norm()).sum::<f64>();
            continue;
        }
        let s = dot(k, omega);
        let bound = gamma * (norm as f64).powf(-tau);
        if s.abs() < bound {
            return Err(Error::SmallDenominator { mode: k.clone(), value: s, bound });
        }
        let denom = Complex64::new(0.0, -s);
        let chi: Vec<Complex64> = pk.iter().map(|v| v / denom).collect();
        for (c, v) in chi.iter().zip(pk) {
            // -omega . d_phi acting on e^{ik.phi} is multiplication by -i omega.k
            residual = residual.max((Complex64::new(0.0, -s) * c - v).norm());
        }
        modes.insert(k.clone(), chi);
    }
    Ok(TorusSolution { modes, residual_sup: residual, dropped_tail: tail })
}

/// Angle-mode components of a time-dependent symbol, `p = sum_k p_k e^{ik.phi}`.
pub type ModeFunctions<'a> = Vec<(Vec<i64>, Box<dyn Fn(f64, f64) -> Complex64 + Sync + 'a>)>;

/// Solution of the harmonic equation, one grid per angle mode.
#[derive(Debug, Clone)]
pub struct HarmonicSolution {
    pub modes: BTreeMap<Vec<i64>, GridSymbol>,
    pub residual_sup: f64,
    /// Smallest `|e^{i omega.k T} - 1|` over the solved modes.
    pub min_denominator: f64,
}

/// Guard for the combined orbital/forcing resonance `|nu k0 + omega.k|`.
pub fn harmonic_guard(omega: &[f64], k: &[i64], nu: f64, gamma: f64, tau: f64) -> (i64, f64, f64) {
    let s = dot(k, omega);
    let k0 = (-s / nu).round() as i64;
    let value = (nu * k0 as f64 + s).abs();
    let bound = gamma / (1.0 + (l1_norm(k) as f64).powf(tau));
    (k0, value, bound)
}

/// Solves `p_k + {h0; chi_k} - i omega.k chi_k = delta_{k0} <p_0>` for the
/// harmonic oscillator, using the explicit flow and
/// `chi_k = (e^{i omega.k T} - 1)^{-1} int_0^T e^{i omega.k t} p_k(Phi^t) dt`.
#[allow(clippy::too_many_arguments)]
pub fn chi_harmonic(
    model: &PotentialModel,
    p_modes: &ModeFunctions<'_>,
    omega: &[f64],
    gamma: f64,
    tau: f64,
    x_nodes: &[f64],
    xi_nodes: &[f64],
    opts: HomologicalOptions,
) -> Result<HarmonicSolution> {
    if model.l() != 1.0 {
        return Err(Error::Contract("chi_harmonic needs the harmonic potential".into()));
    }
    let t_period = PI;
    let nu = 2.0 * PI / t_period;
    let rule = GaussRule::new(24);
    let panels = 32;
    let mut out = BTreeMap::new();
    let mut residual: f64 = 0.0;
    let mut min_den = f64::INFINITY;
    for (k, pk) in p_modes {
        if k.len() != omega.len() {
            return Err(Error::GridMismatch(format!("mode {k:?} vs {} frequencies", omega.len())));
        }
        let s = dot(k, omega);
        let p_grid = GridSymbol::from_complex_fn(
            x_nodes.to_vec(),
            xi_nodes.to_vec(),
            SymbolGrade::new(0.0, 0.0),
            1.0,
            |x, xi| pk(x, xi),
        )?;
        let (chi, avg) = if k.iter().all(|&c| c == 0) {
            let re = |x: f64, xi: f64| pk(x, xi).re;
            let im = |x: f64, xi: f64| pk(x, xi).im;
            let (cr, ar) = solve_on_grid(model, &re, x_nodes, xi_nodes, opts.orbit_samples)?;
            let (ci, ai) = solve_on_grid(model, &im, x_nodes, xi_nodes, opts.orbit_samples)?;
            let chi: Vec<Complex64> = cr.iter().zip(&ci).map(|(a, b)| Complex64::new(a.re, b.re)).collect();
            let avg: Vec<Complex64> = ar.iter().zip(&ai).map(|(a, b)| Complex64::new(a.re, b.re)).collect();
            (p_grid.with_values(chi)?, p_grid.with_values(avg)?)
        } else {
            let (k0, value, bound) = harmonic_guard(omega, k, nu, gamma, tau);
            if value < bound {
                let mut mode = k.clone();
                mode.push(k0);
                return Err(Error::SmallDenominator { mode, value, bound });
            }
            let den = Complex64::from_polar(1.0, s * t_period) - 1.0;
            min_den = min_den.min(den.norm());
            let h = t_period / panels as f64;
            let chi = GridSymbol::from_complex_fn(
                x_nodes.to_vec(),
                xi_nodes.to_vec(),
                SymbolGrade::new(0.0, 0.0),
                1.0,
                |x, xi| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for panel in 0..panels {
                        let a = panel as f64 * h;
                        let mut f = |t: f64| {
                            let (c, sn) = ((2.0 * t).cos(), (2.0 * t).sin());
                            let v = pk(x * c + xi * sn, xi * c - x * sn) * Complex64::from_polar(1.0, s * t);
                            v.re
                        };
                        let mut g = |t: f64| {
                            let (c, sn) = ((2.0 * t).cos(), (2.0 * t).sin());
                            let v = pk(x * c + xi * sn, xi * c - x * sn) * Complex64::from_polar(1.0, s * t);
                            v.im
                        };
                        acc += Complex64::new(rule.integrate(&mut f, a, a + h), rule.integrate(&mut g, a, a + h));
                    }
                    acc / den
                },
            )?;
            let zero = p_grid.with_values(vec![Complex64::new(0.0, 0.0); p_grid.values.len()])?;
            (chi, zero)
        };
        let r = residual_check(model, &p_grid, &chi, &avg, Equation::Mode { shift: s }, opts.margin)?;
        residual = residual.max(r);
        out.insert(k.clone(), chi);
    }
    Ok(HarmonicSolution { modes: out, residual_sup: residual, min_denominator: min_den })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbol_grid::{japanese, symbol_axis};

    fn harmonic() -> PotentialModel {
        PotentialModel::harmonic()
    }

    #[test]
    fn cutoff_profile() {
        assert_eq!(eta(0.5), 0.0);
        assert_eq!(eta(1.0), 0.0);
        assert_eq!(eta(2.0), 1.0);
        assert_eq!(eta(7.0), 1.0);
        assert!((eta(1.5) - 0.5).abs() < 1e-15);
        let mut prev = 0.0;
        for i in 0..=100 {
            let v = eta(1.0 + i as f64 / 100.0);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn averages() {
        let xi = |_: f64, xi: f64| xi;
        for model in [harmonic(), PotentialModel::pure_power(2.0).unwrap(), PotentialModel::smoothed_power(2.0).unwrap()] {
            assert!(orbit_average(&xi, &model, 10.0).unwrap().abs() < 1e-12);
            let m2 = model.clone();
            let h0 = move |x: f64, xi: f64| m2.h0(x, xi);
            assert!((orbit_average(&h0, &model, 10.0).unwrap() - 10.0).abs() < 1e-10);
        }
        for e in [1.0, 4.0, 100.0] {
            let v = orbit_average(&|x: f64, _: f64| x * x, &harmonic(), e).unwrap();
            assert!((v - e / 2.0).abs() < 1e-9 * e);
        }
    }

    #[test]
    fn average_matches_flow_oracle_from_two_points() {
        let model = PotentialModel::smoothed_power(2.0).unwrap();
        let p = |x: f64, xi: f64| japanese(x).powf(1.5) + 0.3 * x * xi + x.powi(4);
        let a = FlowPoint::new(0.7, 2.0);
        let e = a.energy(&model);
        let b = flow(&model, a, 0.123).unwrap();
        let quad = orbit_average(&p, &model, e).unwrap();
        let oa = time_average_along_flow(&p, &model, a, 256).unwrap();
        let ob = time_average_along_flow(&p, &model, b, 256).unwrap();
        assert!((quad - oa).abs() < 1e-9 * quad.abs(), "{quad} {oa}");
        assert!((oa - ob).abs() < 1e-9 * quad.abs());
    }

    #[test]
    fn averaging_is_a_projection() {
        let model = PotentialModel::pure_power(2.0).unwrap();
        let p = |x: f64, _: f64| japanese(x).powf(1.5);
        let avg = AveragedSymbol::build(&p, &model, 2.0, 200.0, 24).unwrap();
        for e in [3.0, 30.0, 150.0] {
            let twice = orbit_average(&avg, &model, e).unwrap();
            assert!((twice - avg.at_energy(e)).abs() < 1e-9 * twice.abs());
            assert!((avg.at_energy(e) - orbit_average(&p, &model, e).unwrap()).abs() < 1e-9 * twice.abs());
        }
    }

    fn small_grid() -> (Vec<f64>, Vec<f64>) {
        (symbol_axis(3.0, 3.0, 0.25), symbol_axis(3.0, 3.0, 0.25))
    }

    #[test]
    fn harmonic_quadratic_solution() {
        let (xs, xis) = small_grid();
        let sol = chi_autonomous(&harmonic(), &|x: f64, _: f64| x * x, SymbolGrade::new(0.0, 2.0), &xs, &xis, HomologicalOptions::default()).unwrap();
        assert!(sol.residual_sup < 1e-10, "{}", sol.residual_sup);
        let nxi = xis.len();
        for (idx, v) in sol.chi.values.iter().enumerate() {
            let (x, xi) = (xs[idx / nxi], xis[idx % nxi]);
            assert!((v.re + x * xi / 4.0).abs() < 1e-12);
        }
        let lin = chi_autonomous(&harmonic(), &|x: f64, _: f64| x, SymbolGrade::new(0.0, 1.0), &xs, &xis, HomologicalOptions::default()).unwrap();
        for (idx, v) in lin.chi.values.iter().enumerate() {
            assert!((v.re + xis[idx % nxi] / 2.0).abs() < 1e-12);
        }
        assert!(lin.residual_sup < 1e-10);
    }

    #[test]
    fn functions_of_energy_have_zero_chi() {
        let model = PotentialModel::smoothed_power(2.0).unwrap();
        let m2 = model.clone();
        let p = move |x: f64, xi: f64| (m2.h0(x, xi)).sqrt();
        let (xs, xis) = small_grid();
        let sol = chi_autonomous(&model, &p, SymbolGrade::new(1.0, 0.0), &xs, &xis, HomologicalOptions::default()).unwrap();
        assert!(sol.chi.values.iter().all(|v| v.norm() < 1e-12));
        assert!(sol.residual_sup < 1e-12);
    }

    #[test]
    fn spectral_solution_matches_time_integral_form() {
        let model = PotentialModel::pure_power(2.0).unwrap();
        let p = |x: f64, xi: f64| japanese(x).powf(1.5) + 0.2 * xi * x;
        for (x, xi) in [(0.5, 1.0), (-1.2, -0.3), (0.1, -2.0)] {
            let a = chi_at_point(&p, &model, x, xi, None).unwrap();
            let b = chi_time_integral(&p, &model, x, xi, 4096).unwrap();
            assert!((a - b).abs() < 1e-5 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn rescaled_solution() {
        let (xs, xis) = small_grid();
        let p = |x: f64, _: f64| x * x;
        let base = chi_autonomous(&harmonic(), &p, SymbolGrade::new(0.0, 2.0), &xs, &xis, HomologicalOptions::default()).unwrap();
        let zero = chi_rescaled(&harmonic(), &p, SymbolGrade::new(0.0, 2.0), &xs, &xis, &|_| 1.0, 0.0, HomologicalOptions::default()).unwrap();
        assert_eq!(zero.chi.values, base.chi.values);
        let r = chi_rescaled(&harmonic(), &p, SymbolGrade::new(0.0, 2.0), &xs, &xis, &|_| 1.0, 0.1, HomologicalOptions::default()).unwrap();
        assert!(r.residual_sup < 1e-8);
        for (a, b) in r.chi.values.iter().zip(&base.chi.values) {
            assert!((a * 1.1 - b).norm() <= 1e-12 * b.norm().max(1e-300) + 1e-15);
        }
        let err = chi_rescaled(&harmonic(), &p, SymbolGrade::new(0.0, 2.0), &xs, &xis, &|_| -1.0, 0.9, HomologicalOptions::default());
        assert!(matches!(err, Err(Error::RescalingSingular(_))));
    }

    #[test]
    fn residual_detects_wrong_solutions() {
        let (xs, xis) = small_grid();
        let p = |x: f64, _: f64| x * x;
        let sol = chi_autonomous(&harmonic(), &p, SymbolGrade::new(0.0, 2.0), &xs, &xis, HomologicalOptions::default()).unwrap();
        let pg = GridSymbol::from_fn(xs.clone(), xis.clone(), SymbolGrade::new(0.0, 2.0), 1.0, p).unwrap();
        let avg = GridSymbol::from_fn(xs.clone(), xis.clone(), SymbolGrade::new(0.0, 2.0), 1.0, |x, xi| (x * x + xi * xi) / 2.0).unwrap();
        let delta = 1e-3;
        let bad = sol.chi.map(|x, xi, v| v + delta * x * xi);
        let r = residual_check(&harmonic(), &pg, &bad, &avg, Equation::Autonomous, 3).unwrap();
        // {h0; x xi} = 2x^2 - 2 xi^2, largest at the interior edge
        let edge = xs[xs.len() - 4];
        let expected = 2.0 * delta * edge * edge;
        assert!((r - expected).abs() < 1e-8, "{r} vs {expected}");
        let zero = pg.with_values(vec![Complex64::new(0.0, 0.0); pg.values.len()]).unwrap();
        let f = GridSymbol::from_fn(xs.clone(), xis.clone(), SymbolGrade::new(0.0, 0.0), 1.0, |x, xi| x * x + xi * xi).unwrap();
        assert!(residual_check(&harmonic(), &f, &zero, &f, Equation::Autonomous, 3).unwrap() < 1e-14);
        let other = GridSymbol::from_fn(vec![0.0, 1.0], vec![0.0, 1.0], SymbolGrade::new(0.0, 0.0), 1.0, |_, _| 0.0).unwrap();
        assert!(matches!(residual_check(&harmonic(), &pg, &other, &avg, Equation::Autonomous, 0), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn torus_examples() {
        let omega = [1.618_033_988_7];
        let mut p = BTreeMap::new();
        p.insert(vec![1], vec![Complex64::new(0.5, 0.0)]);
        p.insert(vec![-1], vec![Complex64::new(0.5, 0.0)]);
        let sol = chi_torus(&p, &omega, 0.05, 2.0, DEFAULT_MODE_CUTOFF).unwrap();
        for phi in [0.0, 0.4, 2.5] {
            let v = sol.eval(&[phi], 0);
            assert!((v.re + phi.sin() / omega[0]).abs() < 1e-14 && v.im.abs() < 1e-14);
        }
        let mut mean_only = BTreeMap::new();
        mean_only.insert(vec![0], vec![Complex64::new(3.0, 0.0)]);
        assert!(chi_torus(&mean_only, &omega, 0.05, 2.0, 32).unwrap().modes.is_empty());
        let mut res = BTreeMap::new();
        res.insert(vec![1, -1], vec![Complex64::new(1.0, 0.0)]);
        assert!(matches!(chi_torus(&res, &[1.5, 1.5], 0.05, 2.0, 32), Err(Error::SmallDenominator { .. })));
    }

    #[test]
    fn harmonic_time_independent_reduces_to_autonomous() {
        let (xs, xis) = small_grid();
        let modes: ModeFunctions = vec![(vec![0], Box::new(|x: f64, _: f64| Complex64::new(x * x, 0.0)))];
        let sol = chi_harmonic(&harmonic(), &modes, &[1.414], 0.01, 2.0, &xs, &xis, HomologicalOptions::default()).unwrap();
        let nxi = xis.len();
        for (idx, v) in sol.modes[&vec![0]].values.iter().enumerate() {
            assert!((v.re + xs[idx / nxi] * xis[idx % nxi] / 4.0).abs() < 1e-12);
        }
        assert_eq!(sol.modes.len(), 1);
    }

    #[test]
    fn harmonic_forced_quadratic() {
        let (xs, xis) = small_grid();
        let modes: ModeFunctions = vec![
            (vec![1], Box::new(|x: f64, _: f64| Complex64::new(0.5 * x * x, 0.0))),
            (vec![-1], Box::new(|x: f64, _: f64| Complex64::new(0.5 * x * x, 0.0))),
        ];
        let sol = chi_harmonic(&harmonic(), &modes, &[1.414], 0.01, 2.0, &xs, &xis, HomologicalOptions::default()).unwrap();
        assert!(sol.residual_sup < 1e-6, "{}", sol.residual_sup);
        // elementary sine bound on the retained denominators
        for k in [1.0f64, -1.0] {
            let a = 1.414 * k * PI;
            let den = (Complex64::from_polar(1.0, a) - 1.0).norm();
            let dist = ((a / 2.0) - PI * (a / 2.0 / PI).round()).abs();
            assert!(den >= 2.0 * dist * 2.0 / PI - 1e-15);
        }
        assert!(sol.min_denominator > 0.0);
    }

    #[test]
    fn harmonic_guard_flags_resonance() {
        let (xs, xis) = small_grid();
        let modes: ModeFunctions = vec![(vec![1], Box::new(|x: f64, _: f64| Complex64::new(x, 0.0)))];
        assert!(matches!(
            chi_harmonic(&harmonic(), &modes, &[2.0], 0.01, 2.0, &xs, &xis, HomologicalOptions::default()),
            Err(Error::SmallDenominator { .. })
        ));
    }

    #[test]
    fn linearity_in_p() {
        let model = PotentialModel::pure_power(2.0).unwrap();
        let a = |x: f64, xi: f64| japanese(x).powf(1.5) * eta(x.powi(4) + xi * xi);
        let b = |x: f64, xi: f64| x * xi;
        let c = |x: f64, xi: f64| 2.0 * a(x, xi) - 3.0 * b(x, xi);
        for (x, xi) in [(0.3, 1.5), (-1.0, 0.2)] {
            let va = chi_at_point(&a, &model, x, xi, None).unwrap();
            let vb = chi_at_point(&b, &model, x, xi, None).unwrap();
            let vc = chi_at_point(&c, &model, x, xi, None).unwrap();
            assert!((vc - 2.0 * va + 3.0 * vb).abs() < 1e-12 * (1.0 + vc.abs()));
        }
    }
}

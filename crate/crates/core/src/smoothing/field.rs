//! Symbols sampled in action-angle form.
//!
//! On `h0 >= e_min` every point of phase space is `(E, psi)` with `E = h0` and
//! `psi` the orbit angle normalised so that it advances uniformly in time,
//! `d psi/dt = 2 pi / T(E)`. A time-dependent symbol is then a function of
//! `(E, psi, phi)`. In these coordinates the orbit average is the `psi`-mean,
//! and with the bracket convention used throughout the crate,
//!
//! `{a; b} = -(2 pi / T) (d_E a d_psi b - d_psi a d_E b)`,
//!
//! so `{h0; chi} = -(2 pi / T) d_psi chi`. Energies sit on Chebyshev–Lobatto
//! nodes in `ln E`, both angles on uniform grids.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::averaging::{chi_torus, default_orbit_resolution, OrbitSamples, DEFAULT_MODE_CUTOFF, THETA0};
use crate::classical::OrbitGeometry;
use crate::error::{Error, Result};
use crate::par;
use crate::potentials::PotentialModel;
use crate::quadrature::{chebyshev_interpolate, chebyshev_nodes, periodic_antiderivative, wavenumber, GaussRule};
use crate::symbol_grid::least_squares_slope;

/// Discretisation parameters of a [`FieldGrid`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSpec {
    pub e_min: f64,
    pub e_max: f64,
    pub energy_nodes: usize,
    pub psi_points: usize,
    pub phi_points: usize,
    /// Lower end of the energy window used by [`FieldGrid::fitted_order`].
    pub fit_e_min: f64,
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec { e_min: 2.0, e_max: 1e5, energy_nodes: 48, psi_points: 1024, phi_points: 16, fit_e_min: 100.0 }
    }
}

/// Values on the `(E, psi, phi)` grid, stored `[(i * K + k) * M + j]` for
/// energy `i`, forcing angle `k` and orbit angle `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(n: usize) -> Self {
        Field { values: vec![0.0; n] }
    }

    pub fn add(&self, other: &Field) -> Field {
        Field { values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, other: &Field) -> Field {
        Field { values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect() }
    }

    pub fn scale(&self, s: f64) -> Field {
        Field { values: self.values.iter().map(|a| a * s).collect() }
    }

    pub fn add_assign(&mut self, other: &Field) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub struct FieldGrid {
    pub model: PotentialModel,
    pub spec: FieldSpec,
    pub omega: f64,
    pub energies: Vec<f64>,
    u: Vec<f64>,
    /// `d/du` on the Chebyshev nodes, row-major.
    diff: Vec<f64>,
    pub period: Vec<f64>,
    /// Phase-space position of each `(E_i, psi_j)`, stored `[i * M + j]`.
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    psi_fft: (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>),
    phi_fft: (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>),
}

impl std::fmt::Debug for FieldGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FieldGrid").field("spec", &self.spec).field("omega", &self.omega).finish()
    }
}

/// Points of the orbit of energy `e` at `psi_j = 2 pi j / m`, starting from
/// the left turning point. Returns `(T, x, xi)`.
pub fn orbit_at_uniform_time(model: &PotentialModel, e: f64, m: usize) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let geo = OrbitGeometry::new(model, e)?;
    let m_theta = default_orbit_resolution(geo.q_m).max(2 * m);
    let orbit = OrbitSamples::new(model, e, m_theta)?;
    let (g, wbar) = periodic_antiderivative(&orbit.w, 2.0 * PI);
    let h = 2.0 * PI / m_theta as f64;
    let psi_at: Vec<f64> = (0..m_theta).map(|k| h * k as f64 + g[k] / wbar).collect();
    let rule = GaussRule::new(8);
    let mut x = Vec::with_capacity(m);
    let mut xi = Vec::with_capacity(m);
    let mut k = 0;
    for j in 0..m {
        let target = 2.0 * PI * j as f64 / m as f64;
        while k + 1 < m_theta && psi_at[k + 1] <= target {
            k += 1;
        }
        let theta_k = THETA0 + h * k as f64;
        let mut theta = theta_k + (target - psi_at[k]) * wbar / orbit.w[k];
        for _ in 0..6 {
            let advance = if theta > theta_k {
                rule.integrate(&mut |t| geo.sample(t).dt_dtheta, theta_k, theta)
            } else {
                0.0
            };
            let f = psi_at[k] + advance / wbar - target;
            let step = f * wbar / geo.sample(theta).dt_dtheta;
            theta -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let s = geo.sample(theta);
        x.push(s.x);
        xi.push(s.xi);
    }
    Ok((2.0 * PI * wbar, x, xi))
}

fn chebyshev_diff(u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let w: Vec<f64> = (0..n)
        .map(|j| {
            let s = if j % 2 == 0 { 1.0 } else { -1.0 };
            if j == 0 || j == n - 1 {
                0.5 * s
            } else {
                s
            }
        })
        .collect();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = (w[j] / w[i]) / (u[i] - u[j]);
                d[i * n + j] = v;
                diag -= v;
            }
        }
        d[i * n + i] = diag;
    }
    d
}

impl FieldGrid {
    pub fn new(model: &PotentialModel, spec: FieldSpec, omega: f64) -> Result<Self> {
        if !(spec.e_min > 0.0 && spec.e_max > spec.e_min && spec.fit_e_min < spec.e_max) {
            return Err(Error::Contract(format!(
                "energy window [{}, {}] with fit start {}",
                spec.e_min, spec.e_max, spec.fit_e_min
            )));
        }
        if spec.energy_nodes < 8 || spec.psi_points < 16 || spec.phi_points < 4 || spec.phi_points % 2 != 0 {
            return Err(Error::Resolution(format!("field grid {spec:?} is too coarse")));
        }
        let u = chebyshev_nodes(spec.energy_nodes, spec.e_min.ln(), spec.e_max.ln());
        let energies: Vec<f64> = u.iter().map(|v| v.exp()).collect();
        let orbits = par::map_slice(&energies, |&e| orbit_at_uniform_time(model, e, spec.psi_points));
        let mut period = Vec::with_capacity(energies.len());
        let mut x = Vec::new();
        let mut xi = Vec::new();
        for o in orbits {
            let (t, ox, oxi) = o?;
            period.push(t);
            x.extend(ox);
            xi.extend(oxi);
        }
        let mut planner = FftPlanner::new();
        let psi_fft = (planner.plan_fft_forward(spec.psi_points), planner.plan_fft_inverse(spec.psi_points));
        let phi_fft = (planner.plan_fft_forward(spec.phi_points), planner.plan_fft_inverse(spec.phi_points));
        Ok(FieldGrid {
            model: model.clone(),
            spec,
            omega,
            diff: chebyshev_diff(&u),
            u,
            energies,
            period,
            x,
            xi,
            psi_fft,
            phi_fft,
        })
    }

    pub fn len(&self) -> usize {
        self.energies.len() * self.spec.phi_points * self.spec.psi_points
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.energies.len(), self.spec.phi_points, self.spec.psi_points)
    }

    pub fn phi(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.spec.phi_points as f64
    }

    pub fn psi(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.spec.psi_points as f64
    }

    /// Samples `f(x, xi, phi)`.
    pub fn sample(&self, f: &(dyn Fn(f64, f64, f64) -> f64 + Sync)) -> Field {
        let (n, kk, m) = self.dims();
        let blocks = par::map_range(n, |i| {
            let mut out = Vec::with_capacity(kk * m);
            for k in 0..kk {
                let phi = self.phi(k);
                for j in 0..m {
                    out.push(f(self.x[i * m + j], self.xi[i * m + j], phi));
                }
            }
            out
        });
        Field { values: blocks.concat() }
    }

    /// A function of energy alone, broadcast over both angles.
    pub fn from_energy(&self, f: impl Fn(f64) -> f64) -> Field {
        let (_, kk, m) = self.dims();
        let mut values = Vec::with_capacity(self.len());
        for &e in &self.energies {
            values.extend(std::iter::repeat_n(f(e), kk * m));
        }
        Field { values }
    }

    /// Applies a multiplier to every `psi` Fourier mode; the multiplier gets
    /// the energy index and the signed wavenumber. The Nyquist mode is zeroed.
    fn psi_multiply(&self, f: &Field, mult: &(dyn Fn(usize, i64) -> Complex64 + Sync)) -> Field {
        let (n, kk, m) = self.dims();
        let (fwd, inv) = &self.psi_fft;
        let lines = par::map_range(n * kk, |line| {
            let i = line / kk;
            let mut buf: Vec<Complex64> =
                f.values[line * m..(line + 1) * m].iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fwd.process(&mut buf);
            for (j, c) in buf.iter_mut().enumerate() {
                if m % 2 == 0 && j == m / 2 {
                    *c = Complex64::new(0.0, 0.0);
                } else {
                    *c *= mult(i, wavenumber(j, m));
                }
            }
            inv.process(&mut buf);
            buf.iter().map(|c| c.re / m as f64).collect::<Vec<f64>>()
        });
        Field { values: lines.concat() }
    }

    /// Removes the Nyquist modes in both angles, which no solver can act on.
    pub fn band_limit(&self, f: &Field) -> Field {
        let (_, kk, m) = self.dims();
        let sign = |j: usize| if j % 2 == 0 { 1.0 } else { -1.0 };
        let mut v = f.values.clone();
        if m % 2 == 0 {
            for line in v.chunks_mut(m) {
                let c = line.iter().enumerate().map(|(j, x)| sign(j) * x).sum::<f64>() / m as f64;
                line.iter_mut().enumerate().for_each(|(j, x)| *x -= c * sign(j));
            }
        }
        if kk % 2 == 0 {
            for block in v.chunks_mut(kk * m) {
                for j in 0..m {
                    let c = (0..kk).map(|k| sign(k) * block[k * m + j]).sum::<f64>() / kk as f64;
                    (0..kk).for_each(|k| block[k * m + j] -= c * sign(k));
                }
            }
        }
        Field { values: v }
    }

    pub fn d_psi(&self, f: &Field) -> Field {
        self.psi_multiply(f, &|_, k| Complex64::new(0.0, k as f64))
    }

    /// `omega d_phi f`, the time derivative at fixed phase-space point.
    pub fn d_time(&self, f: &Field) -> Field {
        let (n, kk, m) = self.dims();
        let (fwd, inv) = &self.phi_fft;
        let omega = self.omega;
        let blocks = par::map_range(n, |i| {
            let base = i * kk * m;
            let mut out = vec![0.0; kk * m];
            let mut buf = vec![Complex64::new(0.0, 0.0); kk];
            for j in 0..m {
                for k in 0..kk {
                    buf[k] = Complex64::new(f.values[base + k * m + j], 0.0);
                }
                fwd.process(&mut buf);
                for (k, c) in buf.iter_mut().enumerate() {
                    if k == kk / 2 {
                        *c = Complex64::new(0.0, 0.0);
                    } else {
                        *c *= Complex64::new(0.0, omega * wavenumber(k, kk) as f64);
                    }
                }
                inv.process(&mut buf);
                for k in 0..kk {
                    out[k * m + j] = buf[k].re / kk as f64;
                }
            }
            out
        });
        Field { values: blocks.concat() }
    }

    /// `d/dE` at fixed angles.
    pub fn d_energy(&self, f: &Field) -> Field {
        let (n, kk, m) = self.dims();
        let block = kk * m;
        let blocks = par::map_range(n, |i| {
            let mut out = vec![0.0; block];
            for j in 0..n {
                let d = self.diff[i * n + j];
                if d == 0.0 {
                    continue;
                }
                for (o, v) in out.iter_mut().zip(&f.values[j * block..(j + 1) * block]) {
                    *o += d * v;
                }
            }
            let s = 1.0 / self.energies[i];
            out.iter_mut().for_each(|o| *o *= s);
            out
        });
        Field { values: blocks.concat() }
    }

    /// `{a; b}`.
    pub fn bracket(&self, a: &Field, b: &Field) -> Field {
        let (_, kk, m) = self.dims();
        let (ea, pa) = (self.d_energy(a), self.d_psi(a));
        let (eb, pb) = (self.d_energy(b), self.d_psi(b));
        let values = (0..self.len())
            .map(|idx| {
                let nu = 2.0 * PI / self.period[idx / (kk * m)];
                -nu * (ea.values[idx] * pb.values[idx] - pa.values[idx] * eb.values[idx])
            })
            .collect();
        Field { values }
    }

    /// `{h0; b} = -(2 pi / T) d_psi b`.
    pub fn bracket_h0(&self, b: &Field) -> Field {
        let (_, kk, m) = self.dims();
        let mut out = self.d_psi(b);
        for (idx, v) in out.values.iter_mut().enumerate() {
            *v *= -2.0 * PI / self.period[idx / (kk * m)];
        }
        out
    }

    /// Orbit average (mean over `psi`), broadcast back over `psi`.
    pub fn psi_mean(&self, f: &Field) -> Field {
        let (_, _, m) = self.dims();
        let mut values = Vec::with_capacity(self.len());
        for line in f.values.chunks(m) {
            let mean = line.iter().sum::<f64>() / m as f64;
            values.extend(std::iter::repeat_n(mean, m));
        }
        Field { values }
    }

    /// Mean over both angles, broadcast; a function of `h0`.
    pub fn angle_mean(&self, f: &Field) -> Field {
        let (_, kk, m) = self.dims();
        let mut values = Vec::with_capacity(self.len());
        for block in f.values.chunks(kk * m) {
            let mean = block.iter().sum::<f64>() / (kk * m) as f64;
            values.extend(std::iter::repeat_n(mean, kk * m));
        }
        Field { values }
    }

    /// Values of a function of `h0` at the energy nodes.
    pub fn energy_profile(&self, f: &Field) -> Vec<f64> {
        let (_, kk, m) = self.dims();
        f.values.chunks(kk * m).map(|b| b.iter().sum::<f64>() / (kk * m) as f64).collect()
    }

    /// Mean-free `chi` with `p + {h0; chi} = <p>`.
    pub fn solve_autonomous(&self, p: &Field) -> Field {
        self.psi_multiply(p, &|i, k| {
            if k == 0 {
                Complex64::new(0.0, 0.0)
            } else {
                let nu = 2.0 * PI / self.period[i];
                Complex64::new(0.0, -1.0 / (nu * k as f64))
            }
        })
    }

    /// `chi(E, phi)` with `omega d_phi chi = b - mean_phi b` for `b` constant
    /// along orbits.
    pub fn solve_torus(&self, b: &Field, gamma: f64, tau: f64) -> Result<(Field, f64)> {
        let (n, kk, m) = self.dims();
        let mut out = Field::zeros(self.len());
        let mut residual: f64 = 0.0;
        for i in 0..n {
            let mut buf: Vec<Complex64> =
                (0..kk).map(|k| Complex64::new(-b.values[(i * kk + k) * m], 0.0)).collect();
            self.phi_fft.0.process(&mut buf);
            let modes: BTreeMap<Vec<i64>, Vec<Complex64>> = buf
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != kk / 2)
                .map(|(k, c)| (vec![wavenumber(k, kk)], vec![*c / kk as f64]))
                .collect();
            let sol = chi_torus(&modes, &[self.omega], gamma, tau, DEFAULT_MODE_CUTOFF)?;
            residual = residual.max(sol.residual_sup);
            for k in 0..kk {
                let v = sol.eval(&[self.phi(k)], 0).re;
                for j in 0..m {
                    out.values[(i * kk + k) * m + j] = v;
                }
            }
        }
        Ok((out, residual))
    }

    /// Solves `p + {h0; chi} - omega d_phi chi = <<p>>` exactly in Fourier
    /// modes when all orbits share the frequency `nu = 2 pi / T` (the
    /// harmonic case), guarding `|nu k0 + omega k| >= gamma / (1 + |k|^tau)`.
    pub fn solve_harmonic(&self, p: &Field, gamma: f64, tau: f64) -> Result<(Field, f64)> {
        let (n, kk, m) = self.dims();
        let block = kk * m;
        let mut out = Vec::with_capacity(self.len());
        let mut min_den = f64::INFINITY;
        for i in 0..n {
            let nu = 2.0 * PI / self.period[i];
            let mut buf: Vec<Complex64> =
                p.values[i * block..(i + 1) * block].iter().map(|&v| Complex64::new(v, 0.0)).collect();
            for line in buf.chunks_mut(m) {
                self.psi_fft.0.process(line);
            }
            let mut col = vec![Complex64::new(0.0, 0.0); kk];
            for j in 0..m {
                for k in 0..kk {
                    col[k] = buf[k * m + j];
                }
                self.phi_fft.0.process(&mut col);
                let k0 = wavenumber(j, m);
                for (k, c) in col.iter_mut().enumerate() {
                    let kt = wavenumber(k, kk);
                    if (k0 == 0 && kt == 0) || k == kk / 2 || (m % 2 == 0 && j == m / 2) {
                        *c = Complex64::new(0.0, 0.0);
                        continue;
                    }
                    let den = nu * k0 as f64 + self.omega * kt as f64;
                    let bound = gamma / (1.0 + (kt.unsigned_abs() as f64).powf(tau));
                    if den.abs() < bound {
                        return Err(Error::SmallDenominator { mode: vec![kt, k0], value: den.abs(), bound });
                    }
                    min_den = min_den.min(den.abs());
                    *c /= Complex64::new(0.0, den);
                }
                self.phi_fft.1.process(&mut col);
                for k in 0..kk {
                    buf[k * m + j] = col[k] / kk as f64;
                }
            }
            for line in buf.chunks_mut(m) {
                self.psi_fft.1.process(line);
            }
            out.extend(buf.iter().map(|c| c.re / m as f64));
        }
        Ok((Field { values: out }, min_den))
    }

    /// Per-energy sup over both angles.
    pub fn sup_profile(&self, f: &Field) -> Vec<f64> {
        let (_, kk, m) = self.dims();
        f.values.chunks(kk * m).map(|b| b.iter().fold(0.0, |s: f64, v| s.max(v.abs()))).collect()
    }

    /// Energies of the fit window, uniform in `ln E`.
    pub fn fit_energies(&self) -> Vec<f64> {
        let (a, b) = (self.spec.fit_e_min.ln(), self.spec.e_max.ln());
        (0..24).map(|q| (a + (b - a) * q as f64 / 23.0).exp()).collect()
    }

    /// Sup over the angles at the fit energies, interpolating in `ln E`.
    pub fn fit_sup(&self, f: &Field) -> Vec<f64> {
        let (n, kk, m) = self.dims();
        let block = kk * m;
        let targets: Vec<f64> = self.fit_energies().iter().map(|e| e.ln()).collect();
        par::map_slice(&targets, |&t| {
            let mut col = vec![0.0; n];
            let mut s: f64 = 0.0;
            for c in 0..block {
                for i in 0..n {
                    col[i] = f.values[i * block + c];
                }
                s = s.max(chebyshev_interpolate(&self.u, &col, t).abs());
            }
            s
        })
    }

    /// Slope of `ln sup |f|` against `ln lambda`, `lambda = (1 + E)^{1/2l}`, over
    /// the fit window. Points where the sup is at or below `floor` are treated
    /// as numerically zero; with fewer than six points left the field counts
    /// as zero and the order is `-inf`.
    pub fn fitted_order(&self, f: &Field, floor: &[f64]) -> f64 {
        let l = self.model.l();
        let sups = self.fit_sup(f);
        let pts: Vec<(f64, f64)> = self
            .fit_energies()
            .iter()
            .zip(&sups)
            .zip(floor)
            .filter(|((_, s), fl)| **s > **fl)
            .map(|((e, s), _)| ((1.0 + e).ln() / (2.0 * l), s.ln()))
            .collect();
        if pts.len() < 6 {
            return f64::NEG_INFINITY;
        }
        least_squares_slope(&pts)
    }

    /// Evaluates a field at an arbitrary `(E, psi, phi)` inside the grid by
    /// trigonometric interpolation in both angles and Chebyshev interpolation
    /// in `ln E`.
    pub fn eval(&self, f: &Field, e: f64, psi: f64, phi: f64) -> f64 {
        let (n, kk, m) = self.dims();
        let mut col = Vec::with_capacity(n);
        for i in 0..n {
            let mut acc = 0.0;
            for k in 0..kk {
                let line = &f.values[(i * kk + k) * m..(i * kk + k + 1) * m];
                acc += trig_weight(kk, phi - self.phi(k)) * periodic_interp(line, psi);
            }
            col.push(acc);
        }
        chebyshev_interpolate(&self.u, &col, e.ln())
    }
}

/// Cardinal function of the `n`-point periodic trigonometric interpolant
/// (Nyquist split evenly), evaluated at offset `d`.
fn trig_weight(n: usize, d: f64) -> f64 {
    let s = (0.5 * d).sin();
    if s.abs() < 1e-14 {
        return 1.0;
    }
    let num = (0.5 * n as f64 * d).sin();
    if n % 2 == 0 {
        num * (0.5 * d).cos() / (n as f64 * s)
    } else {
        num / (n as f64 * s)
    }
}

fn periodic_interp(line: &[f64], psi: f64) -> f64 {
    let m = line.len();
    line.iter().enumerate().map(|(j, v)| v * trig_weight(m, psi - 2.0 * PI * j as f64 / m as f64)).sum()
}

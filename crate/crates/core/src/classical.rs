//! Turning points, periods, the Hamiltonian flow of `h0 = xi^2 + V` and the
//! regularised orbit parametrisation used by every orbit integral.
//!
//! Convention: the flow is `x' = 2 xi`, `xi' = -V'(x)`, which conserves `h0`.
//! With it `T(E) = 2 int_0^{q_M} dq / sqrt(E - V)` and the harmonic period is `pi`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::potentials::PotentialModel;
use crate::quadrature::adaptive_integrate;

/// Per-energy orbit data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySlice {
    pub energy: f64,
    pub q_m: f64,
    pub period: f64,
    /// `q_M E^{-1/2l}`.
    pub q_bar: f64,
}

impl EnergySlice {
    pub fn new(p: &PotentialModel, energy: f64) -> Result<Self> {
        let q_m = turning_point(p, energy)?;
        let period = period_with_turning_point(p, energy, q_m)?;
        Ok(EnergySlice {
            energy,
            q_m,
            period,
            q_bar: q_m * energy.powf(-0.5 / p.l()),
        })
    }

    /// Orbital frequency `2 pi / T`.
    pub fn frequency(&self) -> f64 {
        2.0 * PI / self.period
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowPoint {
    pub x: f64,
    pub xi: f64,
}

impl FlowPoint {
    pub fn new(x: f64, xi: f64) -> Self {
        FlowPoint { x, xi }
    }

    pub fn energy(&self, p: &PotentialModel) -> f64 {
        p.h0(self.x, self.xi)
    }
}

fn check_energy(p: &PotentialModel, energy: f64) -> Result<f64> {
    let v0 = p.v0();
    if !(energy.is_finite() && energy > v0) {
        return Err(Error::NoOrbit { energy, v0 });
    }
    Ok(v0)
}

/// Positive root of `V(q) = E`.
pub fn turning_point(p: &PotentialModel, energy: f64) -> Result<f64> {
    check_energy(p, energy)?;
    let mut hi = (2.0 * energy.powf(0.5 / p.l())).max(1.0);
    let mut guard = 0;
    while p.value(hi) <= energy {
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::Integration("turning point bracket failed".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if p.value(mid) > energy {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut q = 0.5 * (lo + hi);
    for _ in 0..8 {
        let f = p.value(q) - energy;
        let d = p.derivative_unchecked(q, 1);
        if d <= 0.0 {
            break;
        }
        let next = q - f / d;
        if !(lo..=hi).contains(&next) {
            break;
        }
        if (next - q).abs() <= 1e-16 * q {
            q = next;
            break;
        }
        q = next;
    }
    Ok(q)
}

/// `1 - |y|^{2l}` for `|y| = 1 - s`.
fn one_minus_power(l: f64, s: f64) -> f64 {
    -(2.0 * l * (-s).ln_1p()).exp_m1()
}

/// `E - V(q_M (1 - s))`, Taylor-expanded at the turning point for small `s`.
fn energy_gap(p: &PotentialModel, energy: f64, q_m: f64, s: f64) -> f64 {
    if s < 1e-3 {
        let h = -q_m * s;
        let mut term = 1.0;
        let mut acc = 0.0;
        for k in 1..=6 {
            term *= h / k as f64;
            acc += p.derivative_unchecked(q_m, k) * term;
        }
        -acc
    } else {
        energy - p.value(q_m * (1.0 - s))
    }
}

/// `ṽ` as a function of `s = 1 - |y|`.
fn tilde_v_s(p: &PotentialModel, energy: f64, q_m: f64, s: f64) -> f64 {
    if p.is_exact_power() {
        return 1.0;
    }
    if s == 0.0 {
        let l = p.l();
        return (2.0 * l * energy / (q_m * p.derivative_unchecked(q_m, 1))).sqrt();
    }
    (energy * one_minus_power(p.l(), s) / energy_gap(p, energy, q_m, s)).sqrt()
}

/// `ṽ(E, y) = sqrt((1 - |y|^{2l}) / (1 - V(q_M y)/E))`, continuous at `y = ±1`.
pub fn tilde_v(p: &PotentialModel, energy: f64, y: f64) -> Result<f64> {
    check_energy(p, energy)?;
    if !(-1.0..=1.0).contains(&y) {
        return Err(Error::OutsideOrbit { x: y, q_m: 1.0 });
    }
    let q_m = turning_point(p, energy)?;
    Ok(tilde_v_s(p, energy, q_m, 1.0 - y.abs()))
}

/// `(1 - |y|^{2l}) / (1 - y^2)` at `y = sin(theta)`, via `delta = pi/2 - |theta|`.
fn ratio_r(l: f64, delta: f64) -> f64 {
    if delta == 0.0 {
        return l;
    }
    let half = (0.5 * delta).sin();
    let s = 2.0 * half * half;
    let sd = delta.sin();
    one_minus_power(l, s) / (sd * sd)
}

/// Distance `pi/2 - |theta|` after folding `theta` into `[-pi/2, pi/2]`.
fn fold_delta(theta: f64) -> f64 {
    let t = (theta + 0.5 * PI).rem_euclid(2.0 * PI) - 0.5 * PI;
    let folded = if t > 0.5 * PI { PI - t } else { t };
    (0.5 * PI - folded.abs()).max(0.0)
}

/// Point on the orbit of energy `E` at orbit angle `theta`; `theta` increases
/// with time, `theta = 0` is `(0, sqrt(E - V(0)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitSample {
    pub x: f64,
    pub xi: f64,
    /// `dt / dtheta`.
    pub dt_dtheta: f64,
}

/// Orbit geometry at a fixed energy.
#[derive(Debug, Clone)]
pub struct OrbitGeometry<'a> {
    pub potential: &'a PotentialModel,
    pub energy: f64,
    pub q_m: f64,
}

impl<'a> OrbitGeometry<'a> {
    pub fn new(potential: &'a PotentialModel, energy: f64) -> Result<Self> {
        let q_m = turning_point(potential, energy)?;
        Ok(OrbitGeometry { potential, energy, q_m })
    }

    pub fn sample(&self, theta: f64) -> OrbitSample {
        let l = self.potential.l();
        let delta = fold_delta(theta);
        let half = (0.5 * delta).sin();
        let s = 2.0 * half * half;
        let v = tilde_v_s(self.potential, self.energy, self.q_m, s);
        let r = ratio_r(l, delta);
        let sqrt_e = self.energy.sqrt();
        OrbitSample {
            x: self.q_m * theta.sin(),
            xi: sqrt_e * theta.cos() * r.sqrt() / v,
            dt_dtheta: self.q_m * v / (2.0 * sqrt_e * r.sqrt()),
        }
    }

    /// Orbit angle of a point `(x, xi)` on this orbit.
    pub fn angle_of(&self, x: f64, xi: f64) -> f64 {
        let a = (x / self.q_m).clamp(-1.0, 1.0).asin();
        if xi >= 0.0 {
            a
        } else {
            PI - a
        }
    }

    /// `int dt` between two orbit angles with `theta0 <= theta1`.
    pub fn time_between(&self, theta0: f64, theta1: f64) -> Result<f64> {
        adaptive_integrate(|t| self.sample(t).dt_dtheta, theta0, theta1, 1e-13)
    }
}

fn period_with_turning_point(p: &PotentialModel, energy: f64, q_m: f64) -> Result<f64> {
    let geo = OrbitGeometry { potential: p, energy, q_m };
    Ok(4.0 * geo.time_between(0.0, 0.5 * PI)?)
}

/// `T(E)`.
pub fn period(p: &PotentialModel, energy: f64) -> Result<f64> {
    let q_m = turning_point(p, energy)?;
    period_with_turning_point(p, energy, q_m)
}

/// Time to travel from `x0` to `x` on the branch `xi > 0`:
/// `int_{x0}^{x} dq / (2 sqrt(E - V(q)))`.
pub fn time_of_flight(p: &PotentialModel, energy: f64, x0: f64, x: f64) -> Result<f64> {
    let geo = OrbitGeometry::new(p, energy)?;
    for v in [x0, x] {
        if v.abs() > geo.q_m * (1.0 + 1e-12) {
            return Err(Error::OutsideOrbit { x: v, q_m: geo.q_m });
        }
    }
    if x0 > x {
        return Err(Error::Contract(format!("time_of_flight needs x0 <= x, got {x0} > {x}")));
    }
    let th0 = (x0 / geo.q_m).clamp(-1.0, 1.0).asin();
    let th1 = (x / geo.q_m).clamp(-1.0, 1.0).asin();
    if th1 - th0 == 0.0 {
        return Ok(0.0);
    }
    geo.time_between(th0, th1)
}

const YOSHIDA_W1: f64 = -1.177_679_984_178_87;
const YOSHIDA_W2: f64 = 0.235_573_213_359_357;
const YOSHIDA_W3: f64 = 0.784_513_610_477_560;

fn yoshida_coefficients() -> [f64; 7] {
    let w0 = 1.0 - 2.0 * (YOSHIDA_W1 + YOSHIDA_W2 + YOSHIDA_W3);
    [YOSHIDA_W3, YOSHIDA_W2, YOSHIDA_W1, w0, YOSHIDA_W1, YOSHIDA_W2, YOSHIDA_W3]
}

const STEPS_PER_PERIOD: f64 = 2000.0;
const MAX_STEPS: f64 = 1e8;

/// Integrates the flow of `h0` for time `t` (either sign) with a sixth-order
/// symmetric composition of leapfrog steps.
pub fn flow(p: &PotentialModel, start: FlowPoint, t: f64) -> Result<FlowPoint> {
    if !(start.x.is_finite() && start.xi.is_finite() && t.is_finite()) {
        return Err(Error::Integration("non-finite flow input".into()));
    }
    if t == 0.0 {
        return Ok(start);
    }
    let energy = start.energy(p);
    let scale = if energy > p.v0() {
        period(p, energy)?
    } else {
        1.0
    };
    let n = (t.abs() / scale * STEPS_PER_PERIOD).ceil().max(16.0);
    if n > MAX_STEPS {
        return Err(Error::Integration(format!("{n} steps exceed the step budget")));
    }
    let n = n as usize;
    let h = t / n as f64;
    let coeffs = yoshida_coefficients();
    let (mut x, mut xi) = (start.x, start.xi);
    for _ in 0..n {
        for &c in &coeffs {
            let dt = c * h;
            xi -= 0.5 * dt * p.derivative_unchecked(x, 1);
            x += 2.0 * dt * xi;
            xi -= 0.5 * dt * p.derivative_unchecked(x, 1);
        }
    }
    if !(x.is_finite() && xi.is_finite()) {
        return Err(Error::Integration("flow diverged".into()));
    }
    Ok(FlowPoint { x, xi })
}

/// `(x, xi) = (sqrt(A) sin theta, sqrt(A) cos theta)`.
pub fn action_angle_harmonic(x: f64, xi: f64) -> Result<(f64, f64)> {
    if x == 0.0 && xi == 0.0 {
        return Err(Error::UndefinedAngle);
    }
    Ok((x * x + xi * xi, x.atan2(xi)))
}

pub fn from_action_angle(a: f64, theta: f64) -> (f64, f64) {
    let r = a.sqrt();
    (r * theta.sin(), r * theta.cos())
}

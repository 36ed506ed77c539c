//! Galerkin evolution of `i psi' = (H0 + eps W(omega t)) psi` in the `H0`
//! eigenbasis, and quasi-energies of the time-periodic case.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::spectral::weyl::momentum_matrix;
use crate::spectral::{expm, hermitian_defect, sobolev_norm, unitarity_defect, EigenBasis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trig {
    Cos,
    Sin,
}

impl Trig {
    pub fn eval(&self, phase: f64) -> f64 {
        match self {
            Trig::Cos => phase.cos(),
            Trig::Sin => phase.sin(),
        }
    }
}

/// `amplitude * trig(k . omega t) * matrix`.
#[derive(Debug, Clone)]
pub struct ForcingTerm {
    pub matrix: DMatrix<Complex64>,
    pub wave: Vec<i64>,
    pub trig: Trig,
    pub amplitude: f64,
}

impl ForcingTerm {
    fn coefficient(&self, omega: &[f64], t: f64) -> f64 {
        let phase: f64 = self.wave.iter().zip(omega).map(|(&k, &w)| k as f64 * w).sum::<f64>() * t;
        self.amplitude * self.trig.eval(phase)
    }

    /// Time average over the forcing torus (nonresonant `omega`).
    fn average(&self) -> f64 {
        if self.wave.iter().all(|&k| k == 0) {
            self.amplitude * self.trig.eval(0.0)
        } else {
            0.0
        }
    }
}

/// Matrix of multiplication by `a(x)` in the eigenbasis.
pub fn multiplication_matrix(basis: &EigenBasis, a: impl Fn(f64) -> f64) -> DMatrix<Complex64> {
    let v = &basis.vectors;
    let mut av = v.clone();
    for (i, &x) in basis.grid.iter().enumerate() {
        av.row_mut(i).scale_mut(a(x));
    }
    (v.transpose() * av).map(|c| Complex64::new(c, 0.0))
}

/// Weyl quantisation of `a(x) xi`, which is `(a D + D a) / 2` with `D = -i d/dx`.
pub fn momentum_weighted_matrix(basis: &EigenBasis, a: impl Fn(f64) -> f64) -> DMatrix<Complex64> {
    let d = momentum_matrix(basis.grid.len(), basis.dx);
    let v = basis.vectors.map(|c| Complex64::new(c, 0.0));
    let mut av = v.clone();
    for (i, &x) in basis.grid.iter().enumerate() {
        av.row_mut(i).scale_mut(a(x));
    }
    let dv = &d * &v;
    let mut adv = dv.clone();
    for (i, &x) in basis.grid.iter().enumerate() {
        adv.row_mut(i).scale_mut(a(x));
    }
    let m = v.transpose() * (adv + &d * av);
    m * Complex64::new(0.5, 0.0)
}

#[derive(Debug, Clone)]
pub struct DrivenSystem {
    pub lambdas: Vec<f64>,
    pub omega: Vec<f64>,
    pub epsilon: f64,
    pub terms: Vec<ForcingTerm>,
    /// Growth exponent of the potential, for the Sobolev weights.
    pub l: f64,
}

impl DrivenSystem {
    pub fn new(lambdas: Vec<f64>, omega: Vec<f64>, epsilon: f64, terms: Vec<ForcingTerm>, l: f64) -> Result<Self> {
        let n = lambdas.len();
        if omega.is_empty() || omega.len() > 2 {
            return Err(Error::Contract(format!("{} forcing frequencies; evolution supports 1 or 2", omega.len())));
        }
        for t in &terms {
            if t.matrix.nrows() != n || t.matrix.ncols() != n {
                return Err(Error::GridMismatch(format!("forcing matrix {}x{} for a basis of {n}", t.matrix.nrows(), t.matrix.ncols())));
            }
            if t.wave.len() != omega.len() {
                return Err(Error::Contract(format!("wave vector {:?} for {} frequencies", t.wave, omega.len())));
            }
            let d = hermitian_defect(&t.matrix);
            if d > 1e-10 {
                return Err(Error::Contract(format!("forcing matrix is not Hermitian (defect {d:.3e})")));
            }
        }
        Ok(DrivenSystem { lambdas, omega, epsilon, terms, l })
    }

    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    /// Forcing period `2 pi / omega` of the single-frequency case.
    pub fn period(&self) -> Option<f64> {
        (self.omega.len() == 1).then(|| 2.0 * std::f64::consts::PI / self.omega[0])
    }

    pub fn hamiltonian(&self, t: f64) -> DMatrix<Complex64> {
        let mut h = DMatrix::from_diagonal(&DVector::from_iterator(
            self.dim(),
            self.lambdas.iter().map(|&l| Complex64::new(l, 0.0)),
        ));
        for term in &self.terms {
            let c = self.epsilon * term.coefficient(&self.omega, t);
            if c != 0.0 {
                h += &term.matrix * Complex64::new(c, 0.0);
            }
        }
        h
    }

    /// Time average of the forcing operator.
    pub fn averaged_forcing(&self) -> DMatrix<Complex64> {
        let mut w = DMatrix::zeros(self.dim(), self.dim());
        for term in &self.terms {
            w += &term.matrix * Complex64::new(term.average(), 0.0);
        }
        w
    }

    /// Fourth-order Magnus propagator over `[t, t + h]`.
    pub fn magnus_step(&self, t: f64, h: f64) -> DMatrix<Complex64> {
        let s = 3f64.sqrt() / 6.0;
        let a1 = self.hamiltonian(t + (0.5 - s) * h);
        let a2 = self.hamiltonian(t + (0.5 + s) * h);
        // Omega = -i h (A1 + A2) / 2 + (sqrt3 / 12) h^2 [A2, A1] with A = -i H
        let comm = &a2 * &a1 - &a1 * &a2;
        let omega = (&a1 + &a2) * Complex64::new(0.0, -0.5 * h) - comm * Complex64::new(3f64.sqrt() / 12.0 * h * h, 0.0);
        expm(&omega)
    }

    /// `U(t1, t0)` from `steps` Magnus steps; the step exponentials are formed
    /// in parallel and multiplied in order.
    pub fn propagator(&self, t0: f64, t1: f64, steps: usize) -> DMatrix<Complex64> {
        let steps = steps.max(1);
        let h = (t1 - t0) / steps as f64;
        let factors = par::map_range(steps, |k| self.magnus_step(t0 + k as f64 * h, h));
        let mut u = DMatrix::identity(self.dim(), self.dim());
        for f in factors {
            u = f * u;
        }
        u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    pub t_end: f64,
    /// Spacing of output rows; for one frequency it is rounded so that a
    /// whole number of rows fits in a forcing period.
    pub output_dt: f64,
    /// Magnus steps per unit time.
    pub steps_per_unit: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions { t_end: 100.0, output_dt: 0.5, steps_per_unit: 64.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolveRow {
    pub t: f64,
    pub h0: f64,
    pub h1: f64,
    pub h2: f64,
    /// `|psi|^2` carried by the top 10% of basis modes.
    pub tail_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveReport {
    pub rows: Vec<EvolveRow>,
    /// Largest `| ||psi(t)|| - 1 |` seen.
    pub norm_drift: f64,
    /// Unitarity defect of the step propagator per unit time.
    pub unitarity_per_time: f64,
    /// Change of the final state when the step count is halved.
    pub step_defect: f64,
    /// Set when the tail mass exceeds 1% at any output time.
    pub truncation_warning: bool,
}

pub const TAIL_WARNING: f64 = 0.01;

fn tail_mass(psi: &DVector<Complex64>) -> f64 {
    let n = psi.len();
    let start = n - (n / 10).max(1);
    psi.iter().skip(start).map(|c| c.norm_sqr()).sum::<f64>() / psi.norm_squared()
}

impl DrivenSystem {
    fn row(&self, t: f64, psi: &DVector<Complex64>) -> Result<EvolveRow> {
        let c = psi.as_slice();
        Ok(EvolveRow {
            t,
            h0: sobolev_norm(c, 0.0, &self.lambdas, self.l)?,
            h1: sobolev_norm(c, 1.0, &self.lambdas, self.l)?,
            h2: sobolev_norm(c, 2.0, &self.lambdas, self.l)?,
            tail_mass: tail_mass(psi),
        })
    }

    /// Output times and the propagators between consecutive ones. With one
    /// frequency the propagators of a period are reused.
    fn schedule(&self, opts: &EvolveOptions) -> Result<(Vec<f64>, Vec<DMatrix<Complex64>>, f64)> {
        if !(opts.t_end > 0.0 && opts.output_dt > 0.0 && opts.steps_per_unit > 0.0) {
            return Err(Error::Contract("t_end, output_dt and steps_per_unit must be positive".into()));
        }
        let mut times = vec![0.0];
        let mut props = Vec::new();
        let mut defect: f64 = 0.0;
        match self.period() {
            Some(period) => {
                let per = (period / opts.output_dt).round().max(1.0) as usize;
                let dt = period / per as f64;
                let steps = ((dt * opts.steps_per_unit).ceil() as usize).max(1);
                let cycle: Vec<DMatrix<Complex64>> =
                    (0..per).map(|k| self.propagator(k as f64 * dt, (k + 1) as f64 * dt, steps)).collect();
                for u in &cycle {
                    defect = defect.max(unitarity_defect(u));
                }
                // cover [0, t_end]
                let n_out = (opts.t_end / dt - 1e-9).ceil().max(1.0) as usize;
                for k in 0..n_out {
                    times.push((k + 1) as f64 * dt);
                    props.push(cycle[k % per].clone());
                }
                defect /= dt;
            }
            None => {
                let n_out = (opts.t_end / opts.output_dt).round().max(1.0) as usize;
                let dt = opts.t_end / n_out as f64;
                let steps = ((dt * opts.steps_per_unit).ceil() as usize).max(1);
                let list = par::map_range(n_out, |k| self.propagator(k as f64 * dt, (k + 1) as f64 * dt, steps));
                for (k, u) in list.into_iter().enumerate() {
                    defect = defect.max(unitarity_defect(&u) / dt);
                    times.push((k + 1) as f64 * dt);
                    props.push(u);
                }
            }
        }
        Ok((times, props, defect))
    }

    fn run(&self, psi0: &DVector<Complex64>, opts: &EvolveOptions) -> Result<(Vec<EvolveRow>, DVector<Complex64>, f64, f64)> {
        let (times, props, defect) = self.schedule(opts)?;
        let mut psi = psi0.clone();
        let mut rows = vec![self.row(0.0, &psi)?];
        let mut drift: f64 = 0.0;
        for (t, u) in times.iter().skip(1).zip(&props) {
            psi = u * psi;
            drift = drift.max((psi.norm() - 1.0).abs());
            rows.push(self.row(*t, &psi)?);
        }
        Ok((rows, psi, drift, defect))
    }

    /// Evolves a normalized `psi0` over `[0, t_end]`.
    pub fn evolve(&self, psi0: &DVector<Complex64>, opts: &EvolveOptions) -> Result<EvolveReport> {
        if psi0.len() != self.dim() {
            return Err(Error::GridMismatch(format!("state of length {} for a basis of {}", psi0.len(), self.dim())));
        }
        if (psi0.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Contract(format!("initial state has norm {}", psi0.norm())));
        }
        let (rows, last, drift, defect) = self.run(psi0, opts)?;
        let coarse = EvolveOptions { steps_per_unit: 0.5 * opts.steps_per_unit, ..*opts };
        let (_, last_coarse, _, _) = self.run(psi0, &coarse)?;
        let truncation_warning = rows.iter().any(|r| r.tail_mass > TAIL_WARNING);
        Ok(EvolveReport {
            rows,
            norm_drift: drift,
            unitarity_per_time: defect,
            step_defect: (last - last_coarse).norm(),
            truncation_warning,
        })
    }
}

/// Normalized equal superposition of the listed eigenstates.
pub fn superposition(dim: usize, modes: &[usize]) -> Result<DVector<Complex64>> {
    if modes.is_empty() || modes.iter().any(|&j| j >= dim) {
        return Err(Error::Contract(format!("initial modes {modes:?} for a basis of {dim}")));
    }
    let mut v = DVector::zeros(dim);
    for &j in modes {
        v[j] = Complex64::new(1.0, 0.0);
    }
    let n = v.norm();
    Ok(v / Complex64::new(n, 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasiRow {
    pub j: usize,
    pub lambda: f64,
    pub quasi_energy: f64,
    /// `(quasi_energy - lambda) / eps`.
    pub shift: f64,
    /// `|<phi_j, v>|^2` of the matched Floquet vector.
    pub overlap: f64,
    pub flagged: bool,
}

/// Floquet vectors with overlap below this count as ambiguously matched.
pub const MIN_OVERLAP: f64 = 0.5;

impl DrivenSystem {
    /// Monodromy over one forcing period.
    pub fn monodromy(&self, steps: usize) -> Result<DMatrix<Complex64>> {
        let period = self
            .period()
            .ok_or_else(|| Error::Contract("quasi-energies need a single forcing frequency".into()))?;
        Ok(self.propagator(0.0, period, steps))
    }

    /// Quasi-energies from the monodromy eigenphases, each anchored to the
    /// unperturbed level whose eigenvector it overlaps most.
    pub fn quasienergies(&self, steps: usize) -> Result<Vec<QuasiRow>> {
        use std::f64::consts::PI;
        let period = self.period().ok_or_else(|| Error::Contract("quasi-energies need a single forcing frequency".into()))?;
        let u = self.monodromy(steps)?;
        let d = unitarity_defect(&u);
        if d > 1e-9 {
            return Err(Error::Accuracy { achieved: d, requested: 1e-9 });
        }
        let n = self.dim();
        let schur = Schur::new(u);
        let (q, t) = schur.unpack();
        let mut rows: Vec<Option<QuasiRow>> = vec![None; n];
        let mut claimed = vec![0usize; n];
        for k in 0..n {
            let mu = t[(k, k)];
            let col = q.column(k);
            let (j, overlap) = col
                .iter()
                .enumerate()
                .map(|(j, c)| (j, c.norm_sqr()))
                .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            claimed[j] += 1;
            // U = exp(-i E T): unwrap -arg(mu) against lambda_j T
            let lam = self.lambdas[j];
            let raw = -mu.arg();
            let delta = (raw - lam * period).rem_euclid(2.0 * PI);
            let delta = if delta > PI { delta - 2.0 * PI } else { delta };
            let quasi = lam + delta / period;
            let shift_abs = (quasi - lam).abs();
            let row = QuasiRow {
                j,
                lambda: lam,
                quasi_energy: quasi,
                shift: if self.epsilon != 0.0 { (quasi - lam) / self.epsilon } else { 0.0 },
                overlap,
                flagged: overlap < MIN_OVERLAP || shift_abs > 0.5 * self.omega[0],
            };
            match &rows[j] {
                Some(prev) if prev.overlap >= overlap => {}
                _ => rows[j] = Some(row),
            }
        }
        let mut out = Vec::with_capacity(n);
        for (j, r) in rows.into_iter().enumerate() {
            let lam = self.lambdas[j];
            match r {
                Some(mut r) => {
                    r.flagged |= claimed[j] > 1;
                    out.push(r);
                }
                None => out.push(QuasiRow {
                    j,
                    lambda: lam,
                    quasi_energy: f64::NAN,
                    shift: f64::NAN,
                    overlap: 0.0,
                    flagged: true,
                }),
            }
        }
        Ok(out)
    }

    /// First-order shifts `<phi_j, W_avg phi_j>`.
    pub fn first_order_shifts(&self) -> Vec<f64> {
        let w = self.averaged_forcing();
        (0..self.dim()).map(|j| w[(j, j)].re).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::PotentialModel;
    use crate::spectral::{weyl_quantize_fn, WeylOptions};

    fn quartic_basis(n: usize) -> EigenBasis {
        EigenBasis::auto(&PotentialModel::pure_power(2.0).unwrap(), n).unwrap()
    }

    fn japanese15(x: f64) -> f64 {
        (1.0 + x * x).powf(0.75)
    }

    #[test]
    fn forcing_matrices_match_the_weyl_kernel() {
        let b = quartic_basis(24);
        let a = multiplication_matrix(&b, japanese15);
        let k = weyl_quantize_fn(&|x, _| Complex64::new(japanese15(x), 0.0), &b, WeylOptions::default()).unwrap();
        assert!((&a - &k.entries).norm() < 1e-6 * a.norm(), "{}", (&a - &k.entries).norm());
        let m = momentum_weighted_matrix(&b, |x| (1.0 + x * x).powf(0.25));
        let k = weyl_quantize_fn(&|x, xi| Complex64::new((1.0 + x * x).powf(0.25) * xi, 0.0), &b, WeylOptions::default()).unwrap();
        assert!((&m - &k.entries).norm() < 1e-6 * m.norm(), "{}", (&m - &k.entries).norm());
        assert!(hermitian_defect(&m) < 1e-12);
    }

    #[test]
    fn magnus_is_exact_without_forcing() {
        let b = quartic_basis(16);
        let sys = DrivenSystem::new(b.lambdas.clone(), vec![1.3], 0.0, vec![], 2.0).unwrap();
        let t = 0.7;
        let u = sys.propagator(0.0, t, 3);
        for j in 0..sys.dim() {
            let want = Complex64::from_polar(1.0, -b.lambdas[j] * t);
            assert!((u[(j, j)] - want).norm() < 1e-12);
        }
        let q = sys.quasienergies(4).unwrap();
        assert!(q.iter().all(|r| r.shift == 0.0 && !r.flagged));
    }

    #[test]
    fn constant_forcing_matches_exact_exponential() {
        let b = quartic_basis(16);
        let a = multiplication_matrix(&b, |x| x * x);
        let term = ForcingTerm { matrix: a.clone(), wave: vec![0], trig: Trig::Cos, amplitude: 1.0 };
        let sys = DrivenSystem::new(b.lambdas.clone(), vec![1.0], 0.1, vec![term], 2.0).unwrap();
        let h = sys.hamiltonian(0.0);
        let exact = expm(&(h * Complex64::new(0.0, -0.9)));
        assert!((sys.propagator(0.0, 0.9, 2) - exact).norm() < 1e-11);
    }

    #[test]
    fn magnus_converges_at_fourth_order() {
        let b = quartic_basis(16);
        let a = multiplication_matrix(&b, japanese15);
        let term = ForcingTerm { matrix: a, wave: vec![1], trig: Trig::Cos, amplitude: 1.0 };
        let sys = DrivenSystem::new(b.lambdas.clone(), vec![1.7], 0.3, vec![term], 2.0).unwrap();
        let reference = sys.propagator(0.0, 1.0, 1024);
        let e1 = (sys.propagator(0.0, 1.0, 64) - &reference).norm();
        let e2 = (sys.propagator(0.0, 1.0, 128) - &reference).norm();
        let rate = (e1 / e2).log2();
        assert!(rate > 3.7, "{rate}");
        assert!(unitarity_defect(&reference) < 1e-12);
    }

    #[test]
    fn shifts_follow_first_order_perturbation() {
        let b = quartic_basis(48);
        let a = multiplication_matrix(&b, japanese15);
        let terms = vec![
            ForcingTerm { matrix: a.clone(), wave: vec![0], trig: Trig::Cos, amplitude: 1.0 },
            ForcingTerm { matrix: a, wave: vec![1], trig: Trig::Cos, amplitude: 1.0 },
        ];
        let sys = DrivenSystem::new(b.lambdas.clone(), vec![0.5 * (1.0 + 5f64.sqrt())], 1e-4, terms, 2.0).unwrap();
        let rows = sys.quasienergies(256).unwrap();
        let oracle = sys.first_order_shifts();
        for r in rows.iter().take(12) {
            assert!(!r.flagged, "{r:?}");
            assert!((r.shift - oracle[r.j]).abs() < 0.02 * oracle[r.j].abs(), "{r:?} vs {}", oracle[r.j]);
        }
    }

    #[test]
    fn evolution_preserves_the_norm() {
        let b = quartic_basis(24);
        let a = multiplication_matrix(&b, japanese15);
        let term = ForcingTerm { matrix: a, wave: vec![1], trig: Trig::Cos, amplitude: 1.0 };
        let sys = DrivenSystem::new(b.lambdas.clone(), vec![1.1], 0.05, vec![term], 2.0).unwrap();
        let psi = superposition(sys.dim(), &[0, 1]).unwrap();
        let rep = sys.evolve(&psi, &EvolveOptions { t_end: 20.0, output_dt: 0.5, steps_per_unit: 64.0 }).unwrap();
        assert!(rep.norm_drift < 1e-10);
        assert!(rep.step_defect < 1e-6, "{}", rep.step_defect);
        assert!((rep.rows.last().unwrap().t - 20.0).abs() < 0.6);
        assert!(!rep.truncation_warning);
        // quasi-periodic forcing takes the general path
        let term = ForcingTerm { matrix: multiplication_matrix(&b, japanese15), wave: vec![1, 1], trig: Trig::Sin, amplitude: 1.0 };
        let sys = DrivenSystem::new(b.lambdas.clone(), vec![1.1, 2f64.sqrt()], 0.05, vec![term], 2.0).unwrap();
        let rep = sys.evolve(&psi, &EvolveOptions { t_end: 5.0, output_dt: 0.5, steps_per_unit: 64.0 }).unwrap();
        assert_eq!(rep.rows.len(), 11);
        assert!(rep.norm_drift < 1e-10);
    }

    #[test]
    fn unforced_sobolev_norms_are_constant() {
        let b = quartic_basis(16);
        let sys = DrivenSystem::new(b.lambdas.clone(), vec![1.0], 0.0, vec![], 2.0).unwrap();
        let psi = superposition(sys.dim(), &[0, 3, 5]).unwrap();
        let rep = sys.evolve(&psi, &EvolveOptions { t_end: 10.0, output_dt: 1.0, steps_per_unit: 8.0 }).unwrap();
        let first = rep.rows[0];
        for r in &rep.rows {
            assert!((r.h1 - first.h1).abs() < 1e-12 * first.h1 && (r.h2 - first.h2).abs() < 1e-12 * first.h2);
        }
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let b = quartic_basis(8);
        let bad = ForcingTerm { matrix: DMatrix::zeros(3, 3), wave: vec![1], trig: Trig::Cos, amplitude: 1.0 };
        assert!(DrivenSystem::new(b.lambdas.clone(), vec![1.0], 0.1, vec![bad], 2.0).is_err());
        let sys = DrivenSystem::new(b.lambdas.clone(), vec![1.0, 2.0], 0.1, vec![], 2.0).unwrap();
        assert!(matches!(sys.quasienergies(8), Err(Error::Contract(_))));
        assert!(superposition(4, &[4]).is_err());
    }
}

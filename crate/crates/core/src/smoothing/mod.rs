//! Iterative normal-form reduction of `h0 + eps W(x, xi, omega t)`.
//!
//! The Hamiltonian is kept as a power series in `eps` up to a fixed order,
//! every coefficient a [`Field`] on the action-angle grid of [`field`]. One
//! step removes the angle dependence of every coefficient with a generator
//! `G = sum_q eps^q chi_q` and the time-dependent Lie series
//!
//! `h -> sum_k L^k h / k! - sum_k L^k dG/dt / (k+1)!`,  `L f = {f; G}`,
//!
//! first with orbit-angle generators (solved by iterating the autonomous
//! homological equation on the `dchi/dt` defect), then with torus generators
//! that are functions of `h0` and the forcing angle only. In the harmonic
//! case a single exact Fourier solve does both. The order ledger records
//! the predicted grade of each piece next to the grade measured by slope
//! fits of the sup over energy shells.

pub mod field;

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::averaging::{chi_grade, eta};
use crate::classical::OrbitGeometry;
use crate::error::{Error, Result};
use crate::potentials::PotentialModel;
use crate::quadrature::{chebyshev_interpolate, fft};
use crate::symbol_grid::{beta_tilde, grade_compose, GradeOp, GridSymbol, SymbolGrade};

pub use field::{Field, FieldGrid, FieldSpec};

/// A time-dependent symbol `W(x, xi, phi)`.
pub trait Perturbation: Sync {
    fn eval(&self, x: f64, xi: f64, phi: f64) -> f64;
}

impl<F: Fn(f64, f64, f64) -> f64 + Sync> Perturbation for F {
    fn eval(&self, x: f64, xi: f64, phi: f64) -> f64 {
        self(x, xi, phi)
    }
}

/// A [`GridSymbol`] read as `Re sum_k W_k(x, xi) e^{i k phi}` over its angle
/// modes, or as its plain values when it has none.
pub struct ModalSymbol {
    modes: Vec<(i64, GridSymbol)>,
    plain: GridSymbol,
}

impl ModalSymbol {
    pub fn new(g: &GridSymbol) -> Result<Self> {
        let mut modes = Vec::new();
        for (k, v) in &g.angle_modes {
            if k.len() != 1 {
                return Err(Error::Contract(format!("angle mode {k:?}: the driver handles one forcing frequency")));
            }
            modes.push((k[0], g.with_values(v.clone())?));
        }
        Ok(ModalSymbol { modes, plain: g.clone() })
    }
}

impl Perturbation for ModalSymbol {
    fn eval(&self, x: f64, xi: f64, phi: f64) -> f64 {
        if self.modes.is_empty() {
            return self.plain.interpolate(x, xi);
        }
        self.modes
            .iter()
            .map(|(k, g)| (g.interpolate_complex(x, xi) * Complex64::from_polar(1.0, *k as f64 * phi)).re)
            .sum()
    }
}

/// `W = W0 + W_inf` with `W0 = W eta(h0)`, applied to the plain values and
/// to every angle mode.
pub fn split_cutoff(model: &PotentialModel, w: &GridSymbol) -> (GridSymbol, GridSymbol) {
    let nxi = w.xi_nodes.len();
    let cut: Vec<f64> = (0..w.values.len())
        .map(|idx| eta(model.h0(w.x_nodes[idx / nxi], w.xi_nodes[idx % nxi])))
        .collect();
    let apply = |vals: &[Complex64], f: &dyn Fn(f64) -> f64| -> Vec<Complex64> {
        vals.iter().zip(&cut).map(|(v, &c)| v * f(c)).collect()
    };
    let mut w0 = w.clone();
    let mut winf = w.clone();
    w0.values = apply(&w.values, &|c| c);
    winf.values = apply(&w.values, &|c| 1.0 - c);
    for (k, v) in &w.angle_modes {
        w0.angle_modes.insert(k.clone(), apply(v, &|c| c));
        winf.angle_modes.insert(k.clone(), apply(v, &|c| 1.0 - c));
    }
    (w0, winf)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingConfig {
    pub omega: f64,
    pub gamma: f64,
    pub tau: f64,
    /// Stop once the remainder's fitted order is at most `-kappa`.
    pub kappa: f64,
    pub max_steps: usize,
    /// Highest power of `eps` kept.
    pub order: usize,
    /// Allowed excess of a measured order over its prediction.
    pub slack: f64,
    pub max_cascade: usize,
    pub field: FieldSpec,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            omega: 0.5 * (1.0 + 5f64.sqrt()),
            gamma: 0.05,
            tau: 2.0,
            kappa: 2.0,
            max_steps: 4,
            order: 3,
            slack: 0.2,
            max_cascade: 8,
            field: FieldSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Autonomous,
    Torus,
    Harmonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerKind {
    Autonomous,
    Torus,
    Harmonic,
    Remainder,
    /// First Moyal correction to the Poisson Lie series; predicted only.
    MoyalTail,
}

impl LedgerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LedgerKind::Autonomous => "autonomous",
            LedgerKind::Torus => "torus",
            LedgerKind::Harmonic => "harmonic",
            LedgerKind::Remainder => "remainder",
            LedgerKind::MoyalTail => "moyal_tail",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub step: usize,
    pub kind: LedgerKind,
    pub predicted: SymbolGrade,
    pub fitted_order: f64,
    pub residual_sup: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratorRecord {
    pub step: usize,
    pub kind: GeneratorKind,
    /// Power of `eps` the generator multiplies.
    pub power: usize,
    pub grade: SymbolGrade,
    pub fitted_order: f64,
    /// Passes of the `dchi/dt` iteration beyond the first solve.
    pub cascade_passes: usize,
    pub chi: Field,
}

/// A function of `h0` sampled at the driver's energy nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyProfile {
    pub energies: Vec<f64>,
    pub values: Vec<f64>,
}

impl EnergyProfile {
    pub fn eval(&self, e: f64) -> f64 {
        let u: Vec<f64> = self.energies.iter().map(|e| e.ln()).collect();
        chebyshev_interpolate(&u, &self.values, e.ln())
    }

    pub fn max_abs_diff(&self, other: &EnergyProfile) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Bracket of a term of grade `a` with a generator of grade `g = (m, 0)`
/// whose derivatives all gain a full power of `lambda`: the isotropic part
/// lands in `S^{a1 + [a2] + m - l - 1, 0}`; a genuine `<x>` factor adds
/// `S^{a1 + m - l, a2 - 1}`.
pub fn bracket_grade(a: SymbolGrade, g: SymbolGrade, l: f64) -> SymbolGrade {
    let iso = grade_compose(a.coarsen(), g, GradeOp::Poisson, l);
    let iso = SymbolGrade::new(iso.m1 + iso.m2, 0.0);
    if a.m2 == 0.0 {
        return iso;
    }
    let aniso = grade_compose(a, g, GradeOp::Poisson, l);
    if aniso.total() > iso.total() {
        aniso
    } else {
        iso
    }
}

/// Power series `c h0 + sum_{p>=1} eps^p terms[p]`.
#[derive(Debug, Clone)]
struct Series {
    h0: f64,
    terms: Vec<Option<Field>>,
}

impl Series {
    fn empty(order: usize) -> Self {
        Series { h0: 0.0, terms: vec![None; order + 1] }
    }

    fn is_empty(&self) -> bool {
        self.h0 == 0.0 && self.terms.iter().all(Option::is_none)
    }

    fn axpy(&mut self, s: f64, other: &Series) {
        self.h0 += s * other.h0;
        for (a, b) in self.terms.iter_mut().zip(&other.terms) {
            if let Some(b) = b {
                match a {
                    Some(a) => a.add_assign(&b.scale(s)),
                    None => *a = Some(b.scale(s)),
                }
            }
        }
    }
}

/// `L S = {S; G}` with powers above the series order dropped.
fn lie_apply(grid: &FieldGrid, s: &Series, gens: &[Option<Field>]) -> Series {
    let order = s.terms.len() - 1;
    let mut out = Series::empty(order);
    for (q, g) in gens.iter().enumerate() {
        let Some(g) = g else { continue };
        if s.h0 != 0.0 && q <= order {
            let b = grid.bracket_h0(g).scale(s.h0);
            add_into(&mut out.terms[q], b);
        }
        for p in 1..=order {
            if p + q > order {
                break;
            }
            if let Some(sp) = &s.terms[p] {
                add_into(&mut out.terms[p + q], grid.bracket(sp, g));
            }
        }
    }
    out
}

fn add_into(slot: &mut Option<Field>, f: Field) {
    match slot {
        Some(a) => a.add_assign(&f),
        None => *slot = Some(f),
    }
}

/// The time-dependent Lie transform of `s` by `G`.
fn lie_transform(grid: &FieldGrid, s: &Series, gens: &[Option<Field>]) -> Series {
    let order = s.terms.len() - 1;
    let mut out = s.clone();
    let mut term = s.clone();
    for k in 1..=order {
        let next = lie_apply(grid, &term, gens);
        term = scaled(&next, 1.0 / k as f64);
        if term.is_empty() {
            break;
        }
        out.axpy(1.0, &term);
    }
    let mut dot = Series::empty(order);
    for (q, g) in gens.iter().enumerate() {
        if let Some(g) = g {
            if q <= order {
                dot.terms[q] = Some(grid.d_time(g));
            }
        }
    }
    let mut t = dot;
    out.axpy(-1.0, &t);
    for k in 1..=order {
        let next = lie_apply(grid, &t, gens);
        t = scaled(&next, 1.0 / (k + 1) as f64);
        if t.is_empty() {
            break;
        }
        out.axpy(-1.0, &t);
    }
    out
}

fn scaled(s: &Series, c: f64) -> Series {
    Series { h0: s.h0 * c, terms: s.terms.iter().map(|t| t.as_ref().map(|f| f.scale(c))).collect() }
}

pub struct NormalFormState {
    pub grid: FieldGrid,
    pub config: SmoothingConfig,
    pub step: usize,
    series: Series,
    /// Grade classes covering the remainder of each power; empty means zero.
    pub remainder_grades: Vec<Vec<SymbolGrade>>,
    pub normal_grades: Vec<Option<SymbolGrade>>,
    pub generators: Vec<GeneratorRecord>,
    pub ledger: Vec<LedgerEntry>,
    pub beta_tilde: f64,
    pub zero_average: bool,
    pub converged: bool,
    /// Below these per-energy sups (at the fit energies) a field counts as zero.
    floor: Vec<f64>,
}

impl std::fmt::Debug for NormalFormState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NormalFormState")
            .field("step", &self.step)
            .field("ledger", &self.ledger)
            .field("converged", &self.converged)
            .finish()
    }
}

const NEG: f64 = f64::NEG_INFINITY;

/// Adds `g` to `set` unless already present. Classes are not pruned by
/// inclusion: the bracket rule is not monotone in the second index.
fn insert_grade(set: &mut Vec<SymbolGrade>, g: SymbolGrade) {
    const TOL: f64 = 1e-9;
    if !g.total().is_finite() || set.iter().any(|s| (s.m1 - g.m1).abs() < TOL && (s.m2 - g.m2).abs() < TOL) {
        return;
    }
    set.push(g);
}

fn top_grade(set: &[SymbolGrade]) -> Option<SymbolGrade> {
    set.iter().copied().reduce(|a, b| if a.total() >= b.total() { a } else { b })
}

fn set_total(set: &[SymbolGrade]) -> f64 {
    set.iter().map(SymbolGrade::total).fold(NEG, f64::max)
}

/// Grades of `sum_{k>=1} L^k S` where `L` brackets the power-`p` classes in
/// `start[p]` with generators of grade `gens[q]` into power `p + q`.
fn lie_grades(start: &[Vec<SymbolGrade>], gens: &[Option<SymbolGrade>], l: f64) -> Vec<Vec<SymbolGrade>> {
    let order = start.len() - 1;
    let mut out = vec![Vec::new(); order + 1];
    let mut cur = start.to_vec();
    for _ in 0..order {
        let mut next = vec![Vec::new(); order + 1];
        for p in 1..=order {
            for q in 1..=order - p {
                let Some(g) = gens[q] else { continue };
                for &a in &cur[p] {
                    insert_grade(&mut next[p + q], bracket_grade(a, g, l));
                }
            }
        }
        if next.iter().all(Vec::is_empty) {
            break;
        }
        for (o, n) in out.iter_mut().zip(&next) {
            for &g in n {
                insert_grade(o, g);
            }
        }
        cur = next;
    }
    out
}

/// The class kept for a channel measured at order `o`: the predicted classes
/// when the measurement is consistent with them, else the measured order.
fn settle(pred: &[SymbolGrade], o: f64) -> Vec<SymbolGrade> {
    if o == NEG {
        return Vec::new();
    }
    let top = set_total(pred);
    let mut out = if o >= top - 0.5 { pred.to_vec() } else { Vec::new() };
    if o > top || out.is_empty() {
        insert_grade(&mut out, SymbolGrade::new(o, 0.0));
    }
    out
}

impl NormalFormState {
    /// Samples `W` into the `eps^1` coefficient and checks the smoothing
    /// hypotheses `total(grade) < 2l - 1` and `beta~ < l`.
    pub fn new(model: &PotentialModel, w: &dyn Perturbation, grade: SymbolGrade, config: SmoothingConfig) -> Result<Self> {
        let l = model.l();
        if config.order < 2 {
            return Err(Error::Contract("the eps series needs order >= 2".into()));
        }
        if !(config.omega > 0.0) {
            return Err(Error::Contract(format!("forcing frequency {} must be positive", config.omega)));
        }
        let grid = FieldGrid::new(model, config.field, config.omega)?;
        let wf = grid.sample(&|x, xi, phi| w.eval(x, xi, phi));
        let scale = wf.sup().max(1e-300);
        let zero_average = grid.psi_mean(&wf).sup() <= 1e-10 * scale;
        let bt = beta_tilde(grade.m1, grade.m2, l, zero_average);
        if grade.total() >= 2.0 * l - 1.0 || bt >= l {
            return Err(Error::Contract(format!(
                "perturbation grade ({}, {}) with beta~ = {bt} violates total < 2l - 1 = {} and beta~ < l",
                grade.m1,
                grade.m2,
                2.0 * l - 1.0
            )));
        }
        let floor: Vec<f64> = grid.fit_sup(&wf).iter().map(|s| 1e-11 * s.max(1.0)).collect();
        let fitted = grid.fitted_order(&wf, &floor);
        let mut series = Series::empty(config.order);
        series.h0 = 1.0;
        series.terms[1] = Some(wf);
        let mut remainder_grades = vec![Vec::new(); config.order + 1];
        remainder_grades[1] = vec![grade];
        let ledger = vec![LedgerEntry {
            step: 0,
            kind: LedgerKind::Remainder,
            predicted: grade,
            fitted_order: fitted,
            residual_sup: scale,
        }];
        Ok(NormalFormState {
            grid,
            config,
            step: 0,
            series,
            remainder_grades,
            normal_grades: vec![None; config.order + 1],
            generators: Vec::new(),
            ledger,
            beta_tilde: bt,
            zero_average,
            converged: false,
            floor,
        })
    }

    pub fn order(&self) -> usize {
        self.config.order
    }

    /// Coefficient of `eps^p`, `p >= 1`.
    pub fn coefficient(&self, p: usize) -> Option<&Field> {
        self.series.terms.get(p).and_then(Option::as_ref)
    }

    /// Angle-dependent part of the `eps^p` coefficient.
    pub fn remainder(&self, p: usize) -> Option<Field> {
        self.coefficient(p).map(|f| f.sub(&self.grid.angle_mean(f)))
    }

    /// Angle average of the `eps^p` coefficient, a function of `h0`.
    pub fn normal_form(&self, p: usize) -> EnergyProfile {
        let values = match self.coefficient(p) {
            Some(f) => self.grid.energy_profile(f),
            None => vec![0.0; self.grid.energies.len()],
        };
        EnergyProfile { energies: self.grid.energies.clone(), values }
    }

    /// First-order head `z`.
    pub fn z(&self) -> EnergyProfile {
        self.normal_form(1)
    }

    /// Higher-order autonomous corrections, one profile per power `2..=order`.
    pub fn z_tilde(&self) -> Vec<EnergyProfile> {
        (2..=self.order()).map(|p| self.normal_form(p)).collect()
    }

    pub fn fitted_order(&self, f: &Field) -> f64 {
        self.grid.fitted_order(f, &self.floor)
    }

    /// Largest fitted order among the remainders of all powers.
    pub fn remainder_order(&self) -> f64 {
        (1..=self.order())
            .filter_map(|p| self.remainder(p))
            .map(|r| self.fitted_order(&r))
            .fold(NEG, f64::max)
    }

    pub fn last_remainder_entry(&self) -> Option<&LedgerEntry> {
        self.ledger.iter().rev().find(|e| e.kind == LedgerKind::Remainder)
    }

    /// Ledger in CSV form.
    pub fn ledger_csv(&self) -> Result<String> {
        write_ledger_csv(&self.ledger)
    }

    /// The `eps^p` remainder sampled on a phase-space grid, with its forcing
    /// modes in `angle_modes`; zero outside the driver's energy window.
    pub fn remainder_symbol(&self, p: usize, x_nodes: &[f64], xi_nodes: &[f64]) -> Result<GridSymbol> {
        let f = self.remainder(p).unwrap_or_else(|| Field::zeros(self.grid.len()));
        let kk = self.grid.spec.phi_points;
        let model = &self.grid.model;
        let spec = self.grid.spec;
        let mut modes: Vec<Vec<Complex64>> = vec![Vec::new(); kk];
        for &x in x_nodes {
            for &xi in xi_nodes {
                let e = model.h0(x, xi);
                let mut buf = vec![Complex64::new(0.0, 0.0); kk];
                if e >= spec.e_min && e <= spec.e_max {
                    let psi = orbit_time_angle(model, e, x, xi)?;
                    for (k, b) in buf.iter_mut().enumerate() {
                        *b = Complex64::new(self.grid.eval(&f, e, psi, self.grid.phi(k)), 0.0);
                    }
                    fft(&mut buf);
                }
                for (k, b) in buf.iter().enumerate() {
                    modes[k].push(b / kk as f64);
                }
            }
        }
        let grade = self.remainder_grades.get(p).and_then(|s| top_grade(s)).unwrap_or(SymbolGrade::new(NEG, 0.0));
        let mut g = GridSymbol::new(x_nodes.to_vec(), xi_nodes.to_vec(), modes[0].clone(), grade, model.l())?;
        for (k, v) in modes.into_iter().enumerate() {
            if k == kk / 2 {
                continue;
            }
            g.angle_modes.insert(vec![crate::quadrature::wavenumber(k, kk)], v);
        }
        Ok(g)
    }
}

/// Orbit angle of `(x, xi)` in units where it advances uniformly in time,
/// zero at the left turning point.
pub fn orbit_time_angle(model: &PotentialModel, e: f64, x: f64, xi: f64) -> Result<f64> {
    let geo = OrbitGeometry::new(model, e)?;
    let theta = geo.angle_of(x, xi);
    let t = geo.time_between(crate::averaging::THETA0, theta)?;
    let period = 2.0 * geo.time_between(crate::averaging::THETA0, 0.5 * std::f64::consts::PI)?;
    Ok(2.0 * std::f64::consts::PI * t / period)
}

pub fn write_ledger_csv(ledger: &[LedgerEntry]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["step", "kind", "predicted_m1", "predicted_m2", "fitted_order", "residual_sup"]).map_err(io)?;
    for e in ledger {
        w.write_record([
            e.step.to_string(),
            e.kind.as_str().to_string(),
            e.predicted.m1.to_string(),
            e.predicted.m2.to_string(),
            e.fitted_order.to_string(),
            e.residual_sup.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

/// One full reduction cycle.
pub fn smoothing_step(state: &mut NormalFormState) -> Result<()> {
    let l = state.grid.model.l();
    let order = state.order();
    let harmonic = l == 1.0;
    let cfg = state.config;
    state.step += 1;
    let step = state.step;
    let grid = &state.grid;

    let rem: Vec<Option<Field>> = (0..=order)
        .map(|p| if p >= 1 && !state.remainder_grades[p].is_empty() { state.remainder(p) } else { None })
        .collect();
    let gen_grade: Vec<Option<SymbolGrade>> =
        state.remainder_grades.iter().map(|s| top_grade(s).map(|g| chi_grade(g, l))).collect();

    // classes created by the orbit-angle (or harmonic) transform
    let mut start = vec![Vec::new(); order + 1];
    for p in 1..=order {
        for &g in state.remainder_grades[p].iter().chain(&state.normal_grades[p]).chain(&gen_grade[p]) {
            insert_grade(&mut start[p], g);
        }
    }
    let mut pred_a = lie_grades(&start, &gen_grade, l);
    let pair_bound = pred_a.iter().map(|s| set_total(s)).fold(NEG, f64::max);

    let mut gens: Vec<Option<Field>> = vec![None; order + 1];
    let mut records = Vec::new();
    let mut homological_residual: f64 = 0.0;
    for q in 1..=order {
        let Some(r) = &rem[q] else { continue };
        let grade = gen_grade[q].expect("remainder grade present");
        if harmonic {
            let (chi, _) = grid.solve_harmonic(r, cfg.gamma, cfg.tau)?;
            let res = r.add(&grid.bracket_h0(&chi)).sub(&grid.d_time(&chi));
            homological_residual = homological_residual.max(res.sup());
            records.push((q, GeneratorKind::Harmonic, grade, 0, chi.clone()));
            gens[q] = Some(chi);
        } else {
            let c = r.sub(&grid.psi_mean(r));
            let first = grid.solve_autonomous(&c);
            let res = c.add(&grid.bracket_h0(&first));
            homological_residual = homological_residual.max(res.sup());
            let mut total = first.clone();
            let mut last = first;
            let mut tail_grade = grade.total();
            let mut passes = 0;
            while tail_grade >= pair_bound && passes < cfg.max_cascade {
                let defect = grid.d_time(&last).scale(-1.0);
                last = grid.solve_autonomous(&defect);
                total.add_assign(&last);
                tail_grade -= l - 1.0;
                passes += 1;
            }
            insert_grade(&mut pred_a[q], SymbolGrade::new(tail_grade, 0.0));
            records.push((q, GeneratorKind::Autonomous, grade, passes, total.clone()));
            gens[q] = Some(total);
        }
    }
    let mut series = lie_transform(grid, &state.series, &gens);
    let mut pred = pred_a.clone();

    let mut torus_residual: f64 = 0.0;
    if !harmonic {
        // the torus generators act on what the first transform left behind;
        // their brackets with functions of (h0, phi) vanish
        let mut after = vec![Vec::new(); order + 1];
        let mut tgens: Vec<Option<Field>> = vec![None; order + 1];
        let mut tgrade: Vec<Option<SymbolGrade>> = vec![None; order + 1];
        for q in 1..=order {
            let Some(f) = &series.terms[q] else { continue };
            let mean = grid.angle_mean(f);
            let orbit_mean = grid.psi_mean(f);
            after[q] = settle(&pred_a[q], grid.fitted_order(&f.sub(&orbit_mean), &state.floor));
            let b = orbit_mean.sub(&mean);
            let ob = grid.fitted_order(&b, &state.floor);
            if ob == NEG {
                continue;
            }
            let (chi, res) = grid.solve_torus(&b, cfg.gamma, cfg.tau)?;
            torus_residual = torus_residual.max(res);
            let grade = SymbolGrade::new(ob, 0.0);
            tgrade[q] = Some(grade);
            records.push((q, GeneratorKind::Torus, grade, 0, chi.clone()));
            tgens[q] = Some(chi);
        }
        for (p, set) in lie_grades(&after, &tgrade, l).into_iter().enumerate() {
            for g in set {
                insert_grade(&mut pred[p], g);
            }
        }
        if tgens.iter().any(Option::is_some) {
            series = lie_transform(grid, &series, &tgens);
        }
    }
    for t in series.terms.iter_mut().flatten() {
        *t = grid.band_limit(t);
    }
    state.series = series;

    // measure
    let mut measured = NEG;
    let mut rem_sup: f64 = 0.0;
    for p in 1..=order {
        let Some(f) = state.coefficient(p) else {
            state.remainder_grades[p].clear();
            continue;
        };
        let avg = state.grid.angle_mean(f);
        let r = f.sub(&avg);
        let o = state.fitted_order(&r);
        rem_sup = rem_sup.max(r.sup());
        measured = measured.max(o);
        state.remainder_grades[p] = settle(&pred[p], o);
        let n = state.fitted_order(&avg);
        state.normal_grades[p] = (n > NEG).then(|| SymbolGrade::new(n, 0.0));
    }
    let predicted = pred.iter().filter_map(|s| top_grade(s)).reduce(|a, b| if a.total() >= b.total() { a } else { b });

    let mut by_kind: Vec<(GeneratorKind, SymbolGrade, f64)> = Vec::new();
    for (q, kind, grade, passes, chi) in records {
        let fitted = state.fitted_order(&chi);
        match by_kind.iter_mut().find(|(k, _, _)| *k == kind) {
            Some(entry) => {
                if grade.total() > entry.1.total() {
                    entry.1 = grade;
                }
                entry.2 = entry.2.max(fitted);
            }
            None => by_kind.push((kind, grade, fitted)),
        }
        state.generators.push(GeneratorRecord { step, kind, power: q, grade, fitted_order: fitted, cascade_passes: passes, chi });
    }
    for (kind, grade, fitted) in by_kind {
        let (lk, res) = match kind {
            GeneratorKind::Autonomous => (LedgerKind::Autonomous, homological_residual),
            GeneratorKind::Harmonic => (LedgerKind::Harmonic, homological_residual),
            GeneratorKind::Torus => (LedgerKind::Torus, torus_residual),
        };
        state.ledger.push(LedgerEntry { step, kind: lk, predicted: grade, fitted_order: fitted, residual_sup: res });
    }
    let predicted = predicted.unwrap_or(SymbolGrade::new(NEG, 0.0));
    state.ledger.push(LedgerEntry {
        step,
        kind: LedgerKind::Remainder,
        predicted,
        fitted_order: measured,
        residual_sup: rem_sup,
    });
    // first neglected Moyal term of {h0; chi} for the leading generator
    if let Some(g) = gen_grade.iter().flatten().copied().reduce(|a, b| if a.total() >= b.total() { a } else { b }) {
        let h0 = SymbolGrade::new(2.0 * l, 0.0);
        state.ledger.push(LedgerEntry {
            step,
            kind: LedgerKind::MoyalTail,
            predicted: grade_compose(h0, g, GradeOp::TripleBracket, l),
            fitted_order: f64::NAN,
            residual_sup: f64::NAN,
        });
    }
    if measured > predicted.total() + cfg.slack {
        return Err(Error::OrderRegression {
            step,
            measured,
            predicted: predicted.total(),
            ledger: state.ledger_csv()?,
        });
    }
    Ok(())
}

/// Iterates [`smoothing_step`] until the remainder order is at most `-kappa`
/// or `max_steps` is reached; `converged` records which.
pub fn run_smoothing(
    model: &PotentialModel,
    w: &dyn Perturbation,
    grade: SymbolGrade,
    config: SmoothingConfig,
) -> Result<NormalFormState> {
    let mut state = NormalFormState::new(model, w, grade, config)?;
    for _ in 0..config.max_steps {
        smoothing_step(&mut state)?;
        if state.last_remainder_entry().map(|e| e.fitted_order).unwrap_or(0.0) <= -config.kappa {
            state.converged = true;
            break;
        }
    }
    Ok(state)
}

/// One line per ledger entry, for logs.
pub fn ledger_summary(ledger: &[LedgerEntry]) -> String {
    let mut s = String::new();
    for e in ledger {
        let _ = writeln!(
            s,
            "step {} {:<10} predicted ({:+.3}, {:+.3}) fitted {:+.3} sup {:.3e}",
            e.step,
            e.kind.as_str(),
            e.predicted.m1,
            e.predicted.m2,
            e.fitted_order,
            e.residual_sup
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbol_grid::symbol_axis;

    fn quartic() -> PotentialModel {
        PotentialModel::pure_power(2.0).unwrap()
    }

    fn small_config() -> SmoothingConfig {
        SmoothingConfig {
            field: FieldSpec { energy_nodes: 32, psi_points: 512, phi_points: 8, e_max: 1e4, fit_e_min: 50.0, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn first_step_grade_arithmetic() {
        // beta = 1.5 with [beta2] = 1.5, generator m = beta - l + 1 = 0.5
        let w = SymbolGrade::new(0.0, 1.5);
        let g = chi_grade(w, 2.0);
        assert_eq!(g, SymbolGrade::new(0.5, 0.0));
        let b = bracket_grade(w, g, 2.0);
        assert!((b.total() - (1.5 + 0.5 - 2.0 - 1.0)).abs() < 1e-12);
        assert_eq!(beta_tilde(1.0, 0.5, 2.0, true), -0.5);
    }

    #[test]
    fn grade_sets_keep_anisotropic_classes() {
        let mut start = vec![Vec::new(); 4];
        start[1] = vec![SymbolGrade::new(0.0, 0.5)];
        let gens = vec![None, Some(SymbolGrade::new(0.5, 0.0)), None, None];
        let out = lie_grades(&start, &gens, 1.0);
        assert!(out[1].is_empty());
        assert!(out[2].contains(&SymbolGrade::new(-0.5, -0.5)));
        assert!((set_total(&out[3]) + 1.0).abs() < 1e-12);
        // a class is never absorbed by one with a larger total
        let mut s = vec![SymbolGrade::new(-0.5, 0.0)];
        insert_grade(&mut s, SymbolGrade::new(-0.5, -0.5));
        insert_grade(&mut s, SymbolGrade::new(-0.5, -0.5));
        assert_eq!(s.len(), 2);
        assert_eq!(settle(&s, NEG), Vec::<SymbolGrade>::new());
        assert_eq!(settle(&s, -3.0), vec![SymbolGrade::new(-3.0, 0.0)]);
        assert_eq!(settle(&s, -0.7), s);
    }

    #[test]
    fn quartic_first_step_reaches_predicted_head() {
        let w = |x: f64, _: f64, phi: f64| (1.0 + x * x).powf(0.75) * phi.cos();
        let mut st = NormalFormState::new(&quartic(), &w, SymbolGrade::new(0.0, 1.5), small_config()).unwrap();
        assert!(!st.zero_average);
        smoothing_step(&mut st).unwrap();
        let head = st.last_remainder_entry().unwrap();
        assert!((head.predicted.total() + 1.0).abs() < 1e-9, "{:?}", head.predicted);
        assert!(head.fitted_order <= -1.0 + 0.2, "{}", head.fitted_order);
        let auto = st.generators.iter().find(|g| g.kind == GeneratorKind::Autonomous).unwrap();
        assert!((auto.fitted_order - 0.5).abs() < 0.1, "{}", auto.fitted_order);
        assert!(st.ledger.iter().any(|e| e.kind == LedgerKind::MoyalTail));
    }

    #[test]
    fn energy_function_is_already_normal() {
        let f = |e: f64| (1.0 + e).powf(0.25);
        let p = quartic();
        let pp = p.clone();
        let w = move |x: f64, xi: f64, _: f64| f(pp.h0(x, xi));
        let st = run_smoothing(&p, &w, SymbolGrade::new(1.0, 0.0), small_config()).unwrap();
        assert!(st.converged);
        assert_eq!(st.step, 1);
        assert_eq!(st.remainder_order(), NEG);
        let z = st.z();
        for (e, v) in z.energies.iter().zip(&z.values) {
            assert!((v - f(*e)).abs() < 1e-12 * f(*e), "{e}");
        }
        assert!(st.generators.iter().all(|g| g.chi.sup() < 1e-10));
    }

    #[test]
    fn orbit_constant_forcing_needs_only_the_torus_generator() {
        let p = quartic();
        let pp = p.clone();
        let w = move |x: f64, xi: f64, phi: f64| (1.0 + pp.h0(x, xi)).powf(0.25) * phi.cos();
        let mut st = NormalFormState::new(&p, &w, SymbolGrade::new(1.0, 0.0), small_config()).unwrap();
        smoothing_step(&mut st).unwrap();
        let auto = st.generators.iter().find(|g| g.kind == GeneratorKind::Autonomous).unwrap();
        assert!(auto.chi.sup() < 1e-10);
        let torus = st.generators.iter().find(|g| g.kind == GeneratorKind::Torus && g.power == 1).unwrap();
        assert!((torus.fitted_order - 1.0).abs() < 1e-3);
        assert_eq!(st.remainder_order(), NEG);
    }

    #[test]
    fn zero_average_perturbation_head() {
        // <x>^{1/2} xi cos(phi) averages to zero along orbits; xi has grade l
        let w = |x: f64, xi: f64, phi: f64| (1.0 + x * x).powf(0.25) * xi * phi.cos();
        let grade = SymbolGrade::new(2.0, 0.5);
        let st = NormalFormState::new(&quartic(), &w, grade, small_config()).unwrap();
        assert!(st.zero_average);
        assert_eq!(st.beta_tilde, beta_tilde(2.0, 0.5, 2.0, true));
        let mut st = st;
        smoothing_step(&mut st).unwrap();
        let head = st.last_remainder_entry().unwrap().fitted_order;
        assert!(head <= st.beta_tilde + 0.2, "{head} vs {}", st.beta_tilde);
    }

    #[test]
    fn head_is_independent_of_the_forcing_frequency() {
        let w = |x: f64, _: f64, phi: f64| (1.0 + x * x).powf(0.75) * (1.0 + phi.cos());
        let run = |omega: f64| {
            let cfg = SmoothingConfig { omega, max_steps: 1, ..small_config() };
            run_smoothing(&quartic(), &w, SymbolGrade::new(0.0, 1.5), cfg).unwrap()
        };
        let a = run(0.5 * (1.0 + 5f64.sqrt()));
        let b = run(2f64.sqrt());
        assert!(a.z().values.iter().any(|v| v.abs() > 1.0));
        assert!(a.z().max_abs_diff(&b.z()) < 1e-8);
        // the oracle: orbit average of <x>^{3/2} over uniform time
        let z = a.z();
        let e = z.energies[10];
        let (_, x, _) = field::orbit_at_uniform_time(&quartic(), e, 4096).unwrap();
        let avg = x.iter().map(|x| (1.0 + x * x).powf(0.75)).sum::<f64>() / x.len() as f64;
        assert!((z.values[10] - avg).abs() < 1e-9 * avg);
        let dz = a.z_tilde()[0].max_abs_diff(&b.z_tilde()[0]);
        assert!(dz > 1e-6, "{dz}");
    }

    #[test]
    fn harmonic_first_step_is_anisotropic() {
        let cfg = SmoothingConfig {
            order: 3,
            field: FieldSpec { energy_nodes: 24, psi_points: 1024, phi_points: 8, e_max: 400.0, fit_e_min: 10.0, ..Default::default() },
            ..Default::default()
        };
        let w = |x: f64, _: f64, phi: f64| (1.0 + x * x).powf(0.25) * (1.0 + phi.cos());
        let mut st = NormalFormState::new(&PotentialModel::harmonic(), &w, SymbolGrade::new(0.0, 0.5), cfg).unwrap();
        smoothing_step(&mut st).unwrap();
        assert!(st.generators.iter().all(|g| g.kind == GeneratorKind::Harmonic));
        let head = st.last_remainder_entry().unwrap();
        assert_eq!(head.predicted, SymbolGrade::new(-0.5, -0.5));
        assert!((head.fitted_order + 0.5).abs() < 0.2, "{}", head.fitted_order);
    }

    #[test]
    fn hypotheses_are_enforced() {
        let w = |x: f64, _: f64, phi: f64| x * x * phi.cos();
        let err = NormalFormState::new(&quartic(), &w, SymbolGrade::new(0.0, 2.0), small_config()).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn ledger_csv_columns() {
        let e = LedgerEntry { step: 1, kind: LedgerKind::Torus, predicted: SymbolGrade::new(-1.0, 0.5), fitted_order: -0.9, residual_sup: 1e-3 };
        let csv = write_ledger_csv(&[e]).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("step,kind,predicted_m1,predicted_m2,fitted_order,residual_sup"));
        assert_eq!(lines.next(), Some("1,torus,-1,0.5,-0.9,0.001"));
    }

    #[test]
    fn cutoff_split() {
        let p = quartic();
        let axis = symbol_axis(200.0, 2.0, 0.1);
        let one = GridSymbol::from_fn(axis.clone(), axis.clone(), SymbolGrade::new(0.0, 0.0), 2.0, |_, _| 1.0).unwrap();
        let (w0, winf) = split_cutoff(&p, &one);
        let nxi = axis.len();
        for (idx, (a, b)) in w0.values.iter().zip(&winf.values).enumerate() {
            let e = p.h0(axis[idx / nxi], axis[idx % nxi]);
            assert!((a.re - eta(e)).abs() < 1e-15 && (a.re + b.re - 1.0).abs() < 1e-15);
            if e > 2.0 {
                assert_eq!(b.re, 0.0);
            }
        }
        assert!(crate::symbol_grid::order_fit(&winf).unwrap() <= -5.0);
    }

    #[test]
    fn modal_symbol_reads_angle_modes() {
        let axis = symbol_axis(4.0, 2.0, 0.1);
        let mut g = GridSymbol::from_fn(axis.clone(), axis.clone(), SymbolGrade::new(0.0, 1.0), 2.0, |x, _| x).unwrap();
        let half: Vec<Complex64> = g.values.iter().map(|v| v * 0.5).collect();
        g.angle_modes.insert(vec![1], half.clone());
        g.angle_modes.insert(vec![-1], half);
        let m = ModalSymbol::new(&g).unwrap();
        assert!((m.eval(1.3, 0.2, 0.4) - 1.3 * 0.4f64.cos()).abs() < 1e-8);
    }
}

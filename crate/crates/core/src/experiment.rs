//! The CLI subcommands as library calls: each returns a CSV table with a
//! metadata comment line and a JSON summary.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::averaging::{chi_autonomous, eta, orbit_average, HomologicalOptions};
use crate::classical::period;
use crate::config::{ExperimentConfig, Family, GateReport};
use crate::diophantine::excluded_measure_sweep;
use crate::error::{Error, Result};
use crate::floquet::{
    momentum_weighted_matrix, multiplication_matrix, superposition, DrivenSystem, EvolveOptions, ForcingTerm, Trig,
};
use crate::potentials::PotentialModel;
use crate::smoothing::{run_smoothing, FieldSpec, ModalSymbol, Perturbation, SmoothingConfig};
use crate::spectral::{weyl_quantize, EigenBasis, WeylOptions};
use crate::symbol_grid::{japanese, linear_fit, order_fit, symbol_axis, Axis, GridSymbol, PhaseFunction};

/// Version of the CSV layouts written here.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Period,
    Average,
    Homolog,
    Smooth,
    Evolve,
    Quasienergy,
    Measure,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Period => "period",
            Command::Average => "average",
            Command::Homolog => "homolog",
            Command::Smooth => "smooth",
            Command::Evolve => "evolve",
            Command::Quasienergy => "quasienergy",
            Command::Measure => "measure",
        }
    }

    fn uses_perturbation(&self) -> bool {
        !matches!(self, Command::Period | Command::Measure)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub csv: String,
    pub summary: Value,
}

fn csv_table(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

fn f(v: f64) -> String {
    v.to_string()
}

/// The spatial part of the perturbation.
enum Spatial {
    Power(f64),
    PowerXi(f64),
    Grid(GridSymbol),
}

impl PhaseFunction for Spatial {
    fn eval(&self, x: f64, xi: f64) -> f64 {
        match self {
            Spatial::Power(p) => japanese(x).powf(*p),
            Spatial::PowerXi(p) => japanese(x).powf(*p) * xi,
            Spatial::Grid(g) => g.interpolate(x, xi),
        }
    }
}

fn spatial(cfg: &ExperimentConfig) -> Result<Spatial> {
    let p = cfg.perturbation()?;
    Ok(match p.family {
        Family::A0Trig => Spatial::Power(p.a0_power),
        Family::A0XiTrig => Spatial::PowerXi(p.a0_power),
        Family::Grid => Spatial::Grid(cfg.grid_symbol()?),
    })
}

/// `s(x, xi) * sum amplitude trig(k phi)` for one forcing angle.
struct Forced {
    s: Spatial,
    modes: Vec<(i64, Trig, f64)>,
}

impl Perturbation for Forced {
    fn eval(&self, x: f64, xi: f64, phi: f64) -> f64 {
        let t: f64 = self.modes.iter().map(|(k, trig, a)| a * trig.eval(*k as f64 * phi)).sum();
        self.s.eval(x, xi) * t
    }
}

fn driver_perturbation(cfg: &ExperimentConfig) -> Result<Box<dyn Perturbation>> {
    let p = cfg.perturbation()?;
    if p.family == Family::Grid {
        return Ok(Box::new(ModalSymbol::new(&cfg.grid_symbol()?)?));
    }
    let mut modes = Vec::new();
    for m in &p.modes {
        if m.wave.len() != 1 {
            return Err(Error::Contract(format!("wave {:?}: the smoothing driver handles one forcing frequency", m.wave)));
        }
        modes.push((m.wave[0], m.trig, m.amplitude));
    }
    Ok(Box::new(Forced { s: spatial(cfg)?, modes }))
}

fn forcing_terms(cfg: &ExperimentConfig, basis: &EigenBasis, n_freq: usize) -> Result<Vec<ForcingTerm>> {
    let p = cfg.perturbation()?;
    let mut terms = Vec::new();
    match p.family {
        Family::A0Trig | Family::A0XiTrig => {
            let power = p.a0_power;
            let a = |x: f64| japanese(x).powf(power);
            let m = if p.family == Family::A0Trig {
                multiplication_matrix(basis, a)
            } else {
                momentum_weighted_matrix(basis, a)
            };
            for mode in &p.modes {
                if mode.wave.len() != n_freq {
                    return Err(Error::Config(format!("wave {:?} for {n_freq} frequencies", mode.wave)));
                }
                terms.push(ForcingTerm { matrix: m.clone(), wave: mode.wave.clone(), trig: mode.trig, amplitude: mode.amplitude });
            }
        }
        Family::Grid => {
            // W_k e^{ik.phi} + W_-k e^{-ik.phi} = (Q_k + Q_-k) cos + i (Q_k - Q_-k) sin
            let g = cfg.grid_symbol()?;
            let opts = WeylOptions::default();
            if g.angle_modes.is_empty() {
                let q = weyl_quantize(&g, basis, opts)?;
                terms.push(ForcingTerm { matrix: q.entries, wave: vec![0; n_freq], trig: Trig::Cos, amplitude: 1.0 });
            }
            for (k, vals) in &g.angle_modes {
                if k.len() != n_freq {
                    return Err(Error::Config(format!("grid mode {k:?} for {n_freq} frequencies")));
                }
                let lead = k.iter().copied().find(|&c| c != 0).unwrap_or(0);
                if lead < 0 {
                    continue;
                }
                let qk = weyl_quantize(&g.with_values(vals.clone())?, basis, opts)?.entries;
                if lead == 0 {
                    let herm = (&qk + qk.adjoint()) * Complex64::new(0.5, 0.0);
                    terms.push(ForcingTerm { matrix: herm, wave: k.clone(), trig: Trig::Cos, amplitude: 1.0 });
                    continue;
                }
                let neg: Vec<i64> = k.iter().map(|c| -c).collect();
                let qm: DMatrix<Complex64> = match g.angle_modes.get(&neg) {
                    Some(v) => weyl_quantize(&g.with_values(v.clone())?, basis, opts)?.entries,
                    None => DMatrix::zeros(qk.nrows(), qk.ncols()),
                };
                terms.push(ForcingTerm { matrix: &qk + &qm, wave: k.clone(), trig: Trig::Cos, amplitude: 1.0 });
                terms.push(ForcingTerm {
                    matrix: (&qk - &qm) * Complex64::new(0.0, 1.0),
                    wave: k.clone(),
                    trig: Trig::Sin,
                    amplitude: 1.0,
                });
            }
        }
    }
    Ok(terms)
}

fn driven_system(cfg: &ExperimentConfig, model: &PotentialModel) -> Result<(DrivenSystem, EigenBasis, Vec<f64>)> {
    let basis = EigenBasis::auto(model, cfg.basis.size)?;
    let omega = cfg.omega()?;
    let terms = forcing_terms(cfg, &basis, omega.len())?;
    let sys = DrivenSystem::new(basis.lambdas.clone(), omega.clone(), cfg.epsilon, terms, model.l())?;
    Ok((sys, basis, omega))
}

fn smoothing_config(cfg: &ExperimentConfig) -> Result<SmoothingConfig> {
    let omega = cfg.omega()?;
    if omega.len() != 1 {
        return Err(Error::Contract("the smoothing driver handles one forcing frequency".into()));
    }
    let s = cfg.smoothing;
    Ok(SmoothingConfig {
        omega: omega[0],
        gamma: s.gamma,
        tau: s.tau,
        kappa: s.kappa,
        max_steps: s.max_steps,
        order: s.order,
        field: FieldSpec {
            e_max: s.e_max,
            energy_nodes: s.energy_nodes,
            psi_points: s.psi_points,
            phi_points: s.phi_points,
            fit_e_min: s.fit_e_min,
            ..FieldSpec::default()
        },
        ..SmoothingConfig::default()
    })
}

/// Runs `cmd`. A perturbation violating the reducibility gate is refused
/// unless `force` is set or the config does not expect reducibility.
pub fn run(cmd: Command, cfg: &ExperimentConfig, force: bool) -> Result<Artifact> {
    let gate = if cmd.uses_perturbation() { Some(cfg.gate()?) } else { None };
    if let Some(g) = gate {
        if !g.conforming && cfg.expect_reducible && !force {
            return Err(Error::Gate(format!(
                "grade ({}, {}) with beta~ = {} violates beta1 + [beta2] < 2l - 1 or beta~ < l",
                g.grade.m1, g.grade.m2, g.beta_tilde
            )));
        }
    }
    let (header, rows, mut summary) = match cmd {
        Command::Period => cmd_period(cfg)?,
        Command::Average => cmd_average(cfg)?,
        Command::Homolog => cmd_homolog(cfg)?,
        Command::Smooth => cmd_smooth(cfg)?,
        Command::Evolve => cmd_evolve(cfg)?,
        Command::Quasienergy => cmd_quasienergy(cfg)?,
        Command::Measure => cmd_measure(cfg)?,
    };
    let hash = cfg.hash()?;
    let conforming = gate.map(|g| g.conforming.to_string()).unwrap_or_else(|| "n/a".into());
    let mut csv = String::new();
    let _ = writeln!(
        csv,
        "# floquet-smoothing {} schema={} command={} config_sha256={} seed={} conforming={}",
        env!("CARGO_PKG_VERSION"),
        SCHEMA_VERSION,
        cmd.as_str(),
        hash,
        cfg.seed,
        conforming
    );
    let header: Vec<&str> = header.to_vec();
    csv.push_str(&csv_table(&header, &rows)?);
    let obj = summary.as_object_mut().expect("summaries are objects");
    obj.insert("command".into(), json!(cmd.as_str()));
    obj.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    obj.insert("schema".into(), json!(SCHEMA_VERSION));
    obj.insert("config_sha256".into(), json!(hash));
    obj.insert("seed".into(), json!(cfg.seed));
    obj.insert("gate".into(), gate.map(gate_json).unwrap_or(Value::Null));
    Ok(Artifact { csv, summary })
}

fn gate_json(g: GateReport) -> Value {
    json!({
        "beta1": g.grade.m1,
        "beta2": g.grade.m2,
        "beta_tilde": g.beta_tilde,
        "zero_average": g.zero_average,
        "conforming": g.conforming,
    })
}

type Table = (&'static [&'static str], Vec<Vec<String>>, Value);

fn cmd_period(cfg: &ExperimentConfig) -> Result<Table> {
    let model = cfg.potential()?;
    let mut rows = Vec::new();
    for &e in &cfg.sweep.energies {
        rows.push(vec![f(e), f(period(&model, e)?)]);
    }
    Ok((&["energy", "period"], rows, json!({ "points": cfg.sweep.energies.len() })))
}

fn cmd_average(cfg: &ExperimentConfig) -> Result<Table> {
    let model = cfg.potential()?;
    let s = spatial(cfg)?;
    let mut rows = Vec::new();
    for &e in &cfg.sweep.energies {
        rows.push(vec![f(e), f(orbit_average(&s, &model, e)?)]);
    }
    Ok((&["energy", "orbit_average"], rows, json!({ "points": cfg.sweep.energies.len() })))
}

fn cmd_homolog(cfg: &ExperimentConfig) -> Result<Table> {
    let model = cfg.potential()?;
    let s = spatial(cfg)?;
    let g = cfg.gate()?;
    let h = cfg.homolog;
    let xs = symbol_axis(h.extent, h.core, h.spacing);
    let xis = symbol_axis(h.extent.powf(model.l()), h.core, h.spacing);
    let p = |x: f64, xi: f64| s.eval(x, xi) * eta(model.h0(x, xi));
    let opts = HomologicalOptions { tolerance: h.tolerance, ..HomologicalOptions::default() };
    let sol = chi_autonomous(&model, &p, g.grade, &xs, &xis, opts)?;
    let nxi = xis.len();
    let rows: Vec<Vec<String>> = sol
        .chi
        .values
        .iter()
        .enumerate()
        .map(|(idx, v)| vec![f(xs[idx / nxi]), f(xis[idx % nxi]), f(v.re)])
        .collect();
    let order = order_fit(&sol.chi).ok();
    let dx_order = order_fit(&sol.chi.derivative(Axis::X, 1)?).ok();
    Ok((
        &["x", "xi", "chi"],
        rows,
        json!({
            "residual_sup": sol.residual_sup,
            "chi_order": order,
            "dx_chi_order": dx_order,
            "predicted_order": crate::averaging::chi_grade(g.grade, model.l()).total(),
        }),
    ))
}

fn cmd_smooth(cfg: &ExperimentConfig) -> Result<Table> {
    let model = cfg.potential()?;
    let w = driver_perturbation(cfg)?;
    let g = cfg.gate()?;
    let st = run_smoothing(&model, w.as_ref(), g.grade, smoothing_config(cfg)?)?;
    let rows = st
        .ledger
        .iter()
        .map(|e| {
            vec![
                e.step.to_string(),
                e.kind.as_str().to_string(),
                f(e.predicted.m1),
                f(e.predicted.m2),
                f(e.fitted_order),
                f(e.residual_sup),
            ]
        })
        .collect();
    let passes: Vec<usize> = st.generators.iter().map(|g| g.cascade_passes).collect();
    Ok((
        &["step", "kind", "predicted_m1", "predicted_m2", "fitted_order", "residual_sup"],
        rows,
        json!({
            "steps": st.step,
            "converged": st.converged,
            "remainder_order": st.remainder_order(),
            "zero_average": st.zero_average,
            "beta_tilde": st.beta_tilde,
            "cascade_passes": passes,
        }),
    ))
}

fn cmd_evolve(cfg: &ExperimentConfig) -> Result<Table> {
    let model = cfg.potential()?;
    let (sys, _, omega) = driven_system(cfg, &model)?;
    let psi0 = superposition(sys.dim(), &cfg.evolve.initial_modes)?;
    let e = &cfg.evolve;
    let rep = sys.evolve(&psi0, &EvolveOptions { t_end: e.t_end, output_dt: e.output_dt, steps_per_unit: e.steps_per_unit })?;
    let h1_0 = rep.rows[0].h1;
    let max_ratio = rep.rows.iter().map(|r| r.h1 / h1_0).fold(0.0, f64::max);
    let rows = rep
        .rows
        .iter()
        .map(|r| vec![f(r.t), f(r.h0), f(r.h1), f(r.h2), f(r.tail_mass), (r.tail_mass > crate::floquet::TAIL_WARNING).to_string()])
        .collect();
    Ok((
        &["t", "norm_h0", "norm_h1", "norm_h2", "tail_mass", "tail_warning"],
        rows,
        json!({
            "omega": omega,
            "dim": sys.dim(),
            "max_h1_ratio": max_ratio,
            "norm_drift": rep.norm_drift,
            "unitarity_per_time": rep.unitarity_per_time,
            "step_defect": rep.step_defect,
            "truncation_warning": rep.truncation_warning,
        }),
    ))
}

/// Slope of `log |shift|` against `log j` over unflagged rows in `[j_min, j_max]`.
pub fn shift_exponent(rows: &[crate::floquet::QuasiRow], j_min: usize, j_max: usize) -> Option<(f64, usize)> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| !r.flagged && r.j >= j_min && r.j <= j_max && r.shift.is_finite() && r.shift != 0.0)
        .map(|r| ((r.j as f64).ln(), r.shift.abs().ln()))
        .collect();
    (pts.len() >= 3).then(|| (linear_fit(&pts).0, pts.len()))
}

fn cmd_quasienergy(cfg: &ExperimentConfig) -> Result<Table> {
    let model = cfg.potential()?;
    let (sys, _, omega) = driven_system(cfg, &model)?;
    let q = cfg.quasienergy;
    let rows = sys.quasienergies(q.steps_per_period)?;
    let fit = shift_exponent(&rows, q.fit_j_min, q.fit_j_max);
    let flagged = rows.iter().filter(|r| r.flagged).count();
    let table = rows
        .iter()
        .map(|r| vec![r.j.to_string(), f(r.lambda), f(r.quasi_energy), f(r.shift), f(r.overlap), r.flagged.to_string()])
        .collect();
    Ok((
        &["j", "lambda", "quasi_energy", "shift", "overlap", "flagged"],
        table,
        json!({
            "omega": omega,
            "dim": sys.dim(),
            "flagged": flagged,
            "shift_exponent": fit.map(|f| f.0),
            "fit_points": fit.map(|f| f.1),
        }),
    ))
}

fn cmd_measure(cfg: &ExperimentConfig) -> Result<Table> {
    let m = &cfg.measure;
    let est = excluded_measure_sweep(m.n, &m.gammas, m.tau, m.kind, m.samples, cfg.seed)?;
    let pts: Vec<(f64, f64)> = est.iter().map(|e| (e.gamma, e.fraction)).collect();
    let (slope, intercept, r2) = if pts.len() >= 2 { linear_fit(&pts) } else { (f64::NAN, f64::NAN, f64::NAN) };
    let rows = est
        .iter()
        .map(|e| vec![f(e.gamma), e.samples.to_string(), e.excluded.to_string(), f(e.fraction), f(e.stderr)])
        .collect();
    Ok((
        &["gamma", "samples", "excluded", "fraction", "stderr"],
        rows,
        json!({ "slope": slope, "intercept": intercept, "r_squared": r2 }),
    ))
}

//! Experiment configuration, read from TOML.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diophantine::{default_k_max, member_omega0, sample_frequencies, SetKind};
use crate::error::{Error, Result};
use crate::floquet::Trig;
use crate::potentials::{Correction, PotentialKind, PotentialModel};
use crate::symbol_grid::{beta_tilde, pos, GridSymbol, SymbolGrade};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub potential: Option<PotentialSpec>,
    pub perturbation: Option<PerturbationSpec>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub frequency: FrequencySpec,
    #[serde(default)]
    pub basis: BasisSpec,
    #[serde(default)]
    pub evolve: EvolveSpec,
    #[serde(default)]
    pub quasienergy: QuasiSpec,
    #[serde(default)]
    pub smoothing: SmoothingSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub homolog: HomologSpec,
    #[serde(default)]
    pub measure: MeasureSpec,
    #[serde(default)]
    pub seed: u64,
    /// Refuse runs whose perturbation violates the reducibility hypotheses.
    #[serde(default = "yes")]
    pub expect_reducible: bool,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_epsilon() -> f64 {
    0.01
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    #[serde(default = "two")]
    pub l: f64,
    #[serde(default)]
    pub corrections: Vec<Correction>,
}

fn two() -> f64 {
    2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `<x>^p trig(phi)`.
    A0Trig,
    /// `<x>^p xi trig(phi)`.
    A0XiTrig,
    /// A [`GridSymbol`] stored as JSON, forcing modes in `angle_modes`.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub wave: Vec<i64>,
    pub trig: Trig,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub family: Family,
    /// Exponent `p` of `<x>^p`.
    #[serde(default)]
    pub a0_power: f64,
    #[serde(default)]
    pub modes: Vec<ModeSpec>,
    pub grid_path: Option<String>,
    /// Whether the grid symbol has zero orbit average (grid family only).
    #[serde(default)]
    pub zero_average: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencySpec {
    /// Explicit frequencies; when absent they are sampled from `[1, 2]^n`
    /// until one passes the Diophantine test.
    pub omega: Option<Vec<f64>>,
    #[serde(default = "one_usize")]
    pub n: usize,
    #[serde(default = "gamma_default")]
    pub gamma: f64,
    #[serde(default = "two")]
    pub tau: f64,
    pub k_max: Option<i64>,
}

fn one_usize() -> usize {
    1
}

fn gamma_default() -> f64 {
    0.05
}

impl Default for FrequencySpec {
    fn default() -> Self {
        FrequencySpec { omega: None, n: 1, gamma: 0.05, tau: 2.0, k_max: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    /// Eigenpairs computed; the lower half is kept.
    pub size: usize,
}

impl Default for BasisSpec {
    fn default() -> Self {
        BasisSpec { size: 96 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveSpec {
    pub t_end: f64,
    pub output_dt: f64,
    pub steps_per_unit: f64,
    pub initial_modes: Vec<usize>,
}

impl Default for EvolveSpec {
    fn default() -> Self {
        EvolveSpec { t_end: 100.0, output_dt: 0.5, steps_per_unit: 64.0, initial_modes: vec![0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuasiSpec {
    pub steps_per_period: usize,
    /// Levels used in the fit of `log |shift|` against `log j`.
    pub fit_j_min: usize,
    pub fit_j_max: usize,
}

impl Default for QuasiSpec {
    fn default() -> Self {
        QuasiSpec { steps_per_period: 512, fit_j_min: 10, fit_j_max: 40 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingSpec {
    pub kappa: f64,
    pub max_steps: usize,
    pub order: usize,
    pub gamma: f64,
    pub tau: f64,
    pub e_max: f64,
    pub energy_nodes: usize,
    pub psi_points: usize,
    pub phi_points: usize,
    pub fit_e_min: f64,
}

impl Default for SmoothingSpec {
    fn default() -> Self {
        let c = crate::smoothing::SmoothingConfig::default();
        SmoothingSpec {
            kappa: c.kappa,
            max_steps: c.max_steps,
            order: c.order,
            gamma: c.gamma,
            tau: c.tau,
            e_max: c.field.e_max,
            energy_nodes: c.field.energy_nodes,
            psi_points: c.field.psi_points,
            phi_points: c.field.phi_points,
            fit_e_min: c.field.fit_e_min,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub energies: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec { energies: vec![1.0, 4.0, 10.0, 100.0, 1000.0, 10000.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HomologSpec {
    /// Half-width of the x axis; the xi axis extends to `extent^l`.
    pub extent: f64,
    pub core: f64,
    pub spacing: f64,
    /// Residual bound relative to `sup |p|`.
    pub tolerance: f64,
}

impl Default for HomologSpec {
    fn default() -> Self {
        HomologSpec { extent: 64.0, core: 3.0, spacing: 0.25, tolerance: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureSpec {
    pub n: usize,
    pub gammas: Vec<f64>,
    pub tau: f64,
    pub kind: SetKind,
    pub samples: usize,
}

impl Default for MeasureSpec {
    fn default() -> Self {
        MeasureSpec { n: 2, gammas: vec![0.01, 0.02, 0.05, 0.1], tau: 3.0, kind: SetKind::Omega0, samples: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub path: Option<String>,
}

/// Outcome of the reducibility hypotheses for the configured perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub grade: SymbolGrade,
    pub beta_tilde: f64,
    pub zero_average: bool,
    pub conforming: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(Error::Config(format!("epsilon = {} must be finite and non-negative", self.epsilon)));
        }
        if let Some(p) = &self.perturbation {
            match p.family {
                Family::Grid if p.grid_path.is_none() => {
                    return Err(Error::Config("family = \"grid\" needs grid_path".into()));
                }
                Family::A0Trig | Family::A0XiTrig if p.modes.is_empty() => {
                    return Err(Error::Config("perturbation needs at least one entry in modes".into()));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> Result<String> {
        let canon = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        Ok(hex::encode(Sha256::digest(canon.as_bytes())))
    }

    pub fn potential(&self) -> Result<PotentialModel> {
        let p = self.potential.as_ref().ok_or_else(|| Error::Config("missing [potential]".into()))?;
        PotentialModel::new(p.kind, p.l, p.corrections.clone())
    }

    pub fn perturbation(&self) -> Result<&PerturbationSpec> {
        self.perturbation.as_ref().ok_or_else(|| Error::Config("missing [perturbation]".into()))
    }

    pub fn grid_symbol(&self) -> Result<GridSymbol> {
        let p = self.perturbation()?;
        let path = p.grid_path.as_ref().ok_or_else(|| Error::Config("missing grid_path".into()))?;
        GridSymbol::from_json(&std::fs::read_to_string(path)?)
    }

    /// Grade `(beta1, beta2)` and the average branch of the perturbation.
    pub fn gate(&self) -> Result<GateReport> {
        let l = self.potential()?.l();
        let p = self.perturbation()?;
        let (grade, zero_average) = match p.family {
            Family::A0Trig => (SymbolGrade::new(0.0, p.a0_power), false),
            // xi has grade l and averages to zero along every orbit
            Family::A0XiTrig => (SymbolGrade::new(l, p.a0_power), true),
            Family::Grid => (self.grid_symbol()?.grade, p.zero_average),
        };
        let bt = beta_tilde(grade.m1, grade.m2, l, zero_average);
        let mut conforming = grade.m1 + pos(grade.m2) < 2.0 * l - 1.0 && bt < l;
        if p.family == Family::A0XiTrig && l == 1.0 {
            conforming = false;
        }
        Ok(GateReport { grade, beta_tilde: bt, zero_average, conforming })
    }

    /// The forcing frequencies: explicit, or the first seeded sample of
    /// `[1, 2]^n` in the Diophantine set.
    pub fn omega(&self) -> Result<Vec<f64>> {
        let f = &self.frequency;
        if let Some(w) = &f.omega {
            crate::diophantine::validate_frequencies(w)?;
            return Ok(w.clone());
        }
        let k_max = f.k_max.unwrap_or(default_k_max(f.n));
        for round in 0..16u64 {
            for w in sample_frequencies(f.n, 64, self.seed.wrapping_add(round)) {
                if member_omega0(&w, f.gamma, f.tau, k_max)?.member {
                    return Ok(w);
                }
            }
        }
        Err(Error::Config(format!("no Diophantine frequency found for gamma = {}, tau = {}", f.gamma, f.tau)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const QUARTIC: &str = r#"
epsilon = 0.01
[potential]
kind = "pure_power"
l = 2.0
[perturbation]
family = "a0_trig"
a0_power = 1.5
modes = [{ wave = [1], trig = "cos" }]
[frequency]
omega = [1.618033988749895]
"#;

    #[test]
    fn parses_and_gates() {
        let c = ExperimentConfig::from_toml(QUARTIC).unwrap();
        let g = c.gate().unwrap();
        assert!(g.conforming);
        assert_eq!(g.grade, SymbolGrade::new(0.0, 1.5));
        assert_eq!(c.omega().unwrap(), vec![1.618033988749895]);
        assert_eq!(c.hash().unwrap().len(), 64);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let bad = QUARTIC.replace("epsilon = 0.01", "epsilon = 0.01\nepsilom = 2");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(Error::Config(_))));
        let bad = QUARTIC.replace("a0_power = 1.5", "a0_power = 1.5\npower = 1");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn violating_grades_are_non_conforming() {
        let c = ExperimentConfig::from_toml(&QUARTIC.replace("a0_power = 1.5", "a0_power = 2.5")).unwrap();
        assert!(!c.gate().unwrap().conforming);
        let xi = QUARTIC.replace("a0_trig", "a0_xi_trig").replace("a0_power = 1.5", "a0_power = 0.5");
        let g = ExperimentConfig::from_toml(&xi).unwrap().gate().unwrap();
        assert!(g.zero_average && g.conforming);
        assert_eq!(g.beta_tilde, 1.5);
        let xi = xi.replace("a0_power = 0.5", "a0_power = 1.2");
        assert!(!ExperimentConfig::from_toml(&xi).unwrap().gate().unwrap().conforming);
    }

    #[test]
    fn sampled_frequencies_are_seeded() {
        let text = QUARTIC.replace("omega = [1.618033988749895]", "n = 2\ntau = 3.0");
        let mut c = ExperimentConfig::from_toml(&text).unwrap();
        let a = c.omega().unwrap();
        assert_eq!(a, c.omega().unwrap());
        assert!(member_omega0(&a, 0.05, 3.0, 200).unwrap().member);
        c.seed = 7;
        assert_ne!(a, c.omega().unwrap());
    }
}

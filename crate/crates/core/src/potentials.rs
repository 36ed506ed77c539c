//! Confining even potentials `V(x) ~ |x|^{2l}` and their derivatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest derivative order any consumer requests.
pub const MAX_DERIVATIVE: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    /// `V = x^2`, the only admissible potential when `l = 1`.
    Harmonic,
    /// `V = |x|^{2l}`.
    PurePower,
    /// `V = <x>^{2l} = (1 + x^2)^l`.
    SmoothedPower,
}

/// A homogeneous lower-order correction `coefficient * |x|^degree`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub degree: u32,
    pub coefficient: f64,
}

impl Correction {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficient * x.abs().powi(self.degree as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialModel {
    kind: PotentialKind,
    l: f64,
    corrections: Vec<Correction>,
}

impl PotentialModel {
    pub fn harmonic() -> Self {
        PotentialModel {
            kind: PotentialKind::Harmonic,
            l: 1.0,
            corrections: Vec::new(),
        }
    }

    /// `|x|^{2l}`; `l = 1` is normalised to [`PotentialKind::Harmonic`].
    pub fn pure_power(l: f64) -> Result<Self> {
        Self::new(PotentialKind::PurePower, l, Vec::new())
    }

    pub fn smoothed_power(l: f64) -> Result<Self> {
        Self::new(PotentialKind::SmoothedPower, l, Vec::new())
    }

    pub fn new(kind: PotentialKind, l: f64, corrections: Vec<Correction>) -> Result<Self> {
        if !(l.is_finite() && l >= 1.0) {
            return Err(Error::InvalidPotential(format!("exponent l = {l} must be >= 1")));
        }
        let kind = match kind {
            PotentialKind::Harmonic if l != 1.0 => {
                return Err(Error::InvalidPotential("harmonic potential requires l = 1".into()))
            }
            PotentialKind::PurePower if l == 1.0 => PotentialKind::Harmonic,
            PotentialKind::SmoothedPower if l == 1.0 => {
                return Err(Error::InvalidPotential(
                    "for l = 1 only the harmonic potential x^2 is admitted".into(),
                ))
            }
            k => k,
        };
        for c in &corrections {
            if c.degree % 2 != 0 || c.degree as f64 > 2.0 * l - 2.0 {
                return Err(Error::InvalidPotential(format!(
                    "correction degree {} must be even and <= 2l - 2 = {}",
                    c.degree,
                    2.0 * l - 2.0
                )));
            }
            if !c.coefficient.is_finite() {
                return Err(Error::InvalidPotential("non-finite correction coefficient".into()));
            }
        }
        Ok(PotentialModel { kind, l, corrections })
    }

    /// Adds a correction term, validating its degree.
    pub fn with_correction(self, degree: u32, coefficient: f64) -> Result<Self> {
        let mut corrections = self.corrections;
        corrections.push(Correction { degree, coefficient });
        Self::new(self.kind, self.l, corrections)
    }

    pub fn kind(&self) -> PotentialKind {
        self.kind
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn corrections(&self) -> &[Correction] {
        &self.corrections
    }

    /// True when `V(q_M y)/E = |y|^{2l}` exactly, i.e. the orbit ratio is identically 1.
    pub fn is_exact_power(&self) -> bool {
        matches!(self.kind, PotentialKind::Harmonic | PotentialKind::PurePower)
            && self.corrections.is_empty()
    }

    pub fn value(&self, x: f64) -> f64 {
        self.derivative_unchecked(x, 0)
    }

    /// `d^k V / dx^k` at `x` in closed form.
    pub fn eval_derivative(&self, x: f64, k: usize) -> Result<f64> {
        if k > MAX_DERIVATIVE {
            return Err(Error::UnsupportedOrder(k));
        }
        Ok(self.derivative_unchecked(x, k))
    }

    pub(crate) fn derivative_unchecked(&self, x: f64, k: usize) -> f64 {
        let lead = match self.kind {
            PotentialKind::Harmonic => match k {
                0 => x * x,
                1 => 2.0 * x,
                2 => 2.0,
                _ => 0.0,
            },
            PotentialKind::PurePower => abs_power_derivative(x, 2.0 * self.l, k),
            PotentialKind::SmoothedPower => smoothed_derivative(x, self.l, k),
        };
        let corr: f64 = self
            .corrections
            .iter()
            .map(|c| c.coefficient * abs_power_derivative(x, c.degree as f64, k))
            .sum();
        lead + corr
    }

    pub fn v0(&self) -> f64 {
        self.value(0.0)
    }

    /// Classical Hamiltonian `h0 = xi^2 + V(x)`.
    pub fn h0(&self, x: f64, xi: f64) -> f64 {
        xi * xi + self.value(x)
    }
}

/// `d^k/dx^k |x|^p`.
fn abs_power_derivative(x: f64, p: f64, k: usize) -> f64 {
    let mut coef = 1.0;
    for j in 0..k {
        coef *= p - j as f64;
    }
    if coef == 0.0 {
        return 0.0;
    }
    let e = p - k as f64;
    let sign = if x < 0.0 && k % 2 == 1 { -1.0 } else { 1.0 };
    if x == 0.0 {
        return if e == 0.0 {
            coef
        } else if e > 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
    }
    sign * coef * x.abs().powf(e)
}

/// `d^k/dx^k (1+x^2)^l` from the expansion into terms `a x^p (1+x^2)^q`.
fn smoothed_derivative(x: f64, l: f64, k: usize) -> f64 {
    // (coefficient, power of x, power of (1+x^2))
    let mut terms: Vec<(f64, i32, f64)> = vec![(1.0, 0, l)];
    for _ in 0..k {
        let mut next = Vec::with_capacity(terms.len() * 2);
        for &(a, p, q) in &terms {
            if p > 0 {
                next.push((a * p as f64, p - 1, q));
            }
            if q != 0.0 {
                next.push((2.0 * a * q, p + 1, q - 1.0));
            }
        }
        terms = next;
    }
    let u = 1.0 + x * x;
    terms
        .iter()
        .map(|&(a, p, q)| a * x.powi(p) * u.powf(q))
        .sum()
}

/// One checked assumption in a [`ValidationReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Location of the worst violation (or of the smallest margin when passing).
    pub worst_x: f64,
    pub worst_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Checks symmetry, non-degeneracy of `V'` away from the origin and the
/// leading asymptotics on a symmetric grid. Failures are reported, not raised.
pub fn validate_assumptions(p: &PotentialModel, grid_extent: f64, n_points: usize) -> ValidationReport {
    assert!(grid_extent > 0.0 && n_points >= 16, "grid_extent > 0 and n_points >= 16");
    let xs: Vec<f64> = (0..n_points)
        .map(|i| -grid_extent + 2.0 * grid_extent * i as f64 / (n_points - 1) as f64)
        .collect();

    // symmetry
    let mut sym = (0.0_f64, 0.0_f64);
    for &x in &xs {
        let d = (p.value(x) - p.value(-x)).abs() / (1.0 + p.value(x).abs());
        if d > sym.1 {
            sym = (x, d);
        }
    }
    let symmetry = AssumptionCheck {
        name: "symmetry",
        passed: sym.1 <= 1e-12,
        worst_x: sym.0,
        worst_value: sym.1,
    };

    // V'(x) has the sign of x for x != 0; a sign flip between neighbours is
    // localised by bisection.
    let dv = |x: f64| p.derivative_unchecked(x, 1);
    let mut crit: Option<f64> = None;
    let mut weakest = (grid_extent, f64::INFINITY);
    let positive: Vec<f64> = xs.iter().copied().filter(|&x| x > 0.0).collect();
    for w in positive.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (fa, fb) = (dv(a), dv(b));
        if fa == 0.0 {
            crit = Some(a);
            break;
        }
        if fa * fb <= 0.0 {
            crit = Some(if fb == 0.0 { b } else { bisect(dv, a, b) });
            break;
        }
        let margin = fa / a;
        if margin < weakest.1 {
            weakest = (a, margin);
        }
    }
    if crit.is_none() && weakest.1 <= 0.0 {
        // V' keeps the wrong sign on the whole positive grid
        crit = Some(weakest.0);
    }
    let nondegenerate = match crit {
        Some(x) => AssumptionCheck {
            name: "nondegenerate_derivative",
            passed: false,
            worst_x: x,
            worst_value: dv(x),
        },
        None => AssumptionCheck {
            name: "nondegenerate_derivative",
            passed: true,
            worst_x: weakest.0,
            worst_value: weakest.1,
        },
    };

    // leading asymptotics: the relative deviation of V/|x|^{2l} from 1 must
    // shrink across the outer half of the grid and be small at the edge
    let ratio_dev = |x: f64| (p.value(x) / x.abs().powf(2.0 * p.l()) - 1.0).abs();
    let outer = ratio_dev(grid_extent);
    let inner = ratio_dev(0.5 * grid_extent);
    let asymptotic = AssumptionCheck {
        name: "leading_asymptotics",
        passed: outer <= 0.1 && outer <= inner + 1e-15,
        worst_x: grid_extent,
        worst_value: outer,
    };

    ValidationReport {
        checks: vec![symmetry, nondegenerate, asymptotic],
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let fa0 = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (f(m) > 0.0) == (fa0 > 0.0) {
            a = m;
        } else {
            b = m;
        }
        if b - a <= 1e-15 * b.abs().max(1.0) {
            break;
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        let s = PotentialModel::smoothed_power(2.0).unwrap();
        assert_eq!(s.eval_derivative(1.0, 0).unwrap(), 4.0);
        let h = PotentialModel::harmonic();
        assert_eq!(h.eval_derivative(3.0, 1).unwrap(), 6.0);
        let q = PotentialModel::pure_power(2.0).unwrap();
        assert_eq!(q.eval_derivative(2.0, 2).unwrap(), 48.0);
    }

    #[test]
    fn unsupported_order() {
        let q = PotentialModel::pure_power(2.0).unwrap();
        assert_eq!(q.eval_derivative(1.0, 7), Err(Error::UnsupportedOrder(7)));
    }

    #[test]
    fn l_one_forces_harmonic() {
        assert_eq!(PotentialModel::pure_power(1.0).unwrap().kind(), PotentialKind::Harmonic);
        assert!(PotentialModel::smoothed_power(1.0).is_err());
        assert!(PotentialModel::pure_power(0.5).is_err());
    }

    #[test]
    fn correction_degree_ladder() {
        let q = PotentialModel::pure_power(2.0).unwrap();
        assert!(q.clone().with_correction(2, 1.0).is_ok());
        assert!(q.clone().with_correction(4, 1.0).is_err());
        assert!(q.with_correction(1, 1.0).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let models = [
            PotentialModel::harmonic(),
            PotentialModel::pure_power(2.0).unwrap(),
            PotentialModel::pure_power(2.5).unwrap(),
            PotentialModel::smoothed_power(2.0).unwrap(),
            PotentialModel::smoothed_power(1.5).unwrap(),
            PotentialModel::pure_power(3.0).unwrap().with_correction(2, -0.7).unwrap(),
        ];
        let h = 1e-4;
        for m in &models {
            for k in 1..=MAX_DERIVATIVE {
                for i in 0..41 {
                    let x = -10.0 + 0.5 * i as f64;
                    if x.abs() < 0.3 {
                        continue;
                    }
                    let fd = (m.eval_derivative(x + h, k - 1).unwrap()
                        - m.eval_derivative(x - h, k - 1).unwrap())
                        / (2.0 * h);
                    let exact = m.eval_derivative(x, k).unwrap();
                    let scale = exact.abs().max(m.eval_derivative(x, k - 1).unwrap().abs() * 1e-3).max(1e-6);
                    assert!(
                        (fd - exact).abs() <= 1e-6 * scale.max(exact.abs()) + 1e-7,
                        "{:?} k={k} x={x}: fd {fd} exact {exact}",
                        m.kind()
                    );
                }
            }
        }
    }

    #[test]
    fn correction_homogeneity() {
        for deg in [0u32, 2, 4] {
            let c = Correction { degree: deg, coefficient: 1.7 };
            for rho in [2.0, 3.0] {
                for x in [-2.5, 0.3, 1.7] {
                    let lhs = c.eval(rho * x);
                    let rhs = rho.powi(deg as i32) * c.eval(x);
                    assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300));
                }
            }
        }
    }

    #[test]
    fn symmetric_grid_reports() {
        assert!(validate_assumptions(&PotentialModel::harmonic(), 10.0, 1001).all_passed());
        assert!(validate_assumptions(&PotentialModel::smoothed_power(2.0).unwrap(), 10.0, 1001).all_passed());
    }

    #[test]
    fn double_well_is_flagged_at_its_critical_point() {
        // x^4 - 2x^2 has V'(1) = 0
        let dw = PotentialModel::pure_power(2.0).unwrap().with_correction(2, -2.0).unwrap();
        let report = validate_assumptions(&dw, 10.0, 1001);
        let c = report.check("nondegenerate_derivative").unwrap();
        assert!(!c.passed);
        // independent oracle: Newton on V'(x) = 4x^3 - 4x from x = 1.3
        let mut x: f64 = 1.3;
        for _ in 0..50 {
            x -= (4.0 * x.powi(3) - 4.0 * x) / (12.0 * x * x - 4.0);
        }
        assert!((c.worst_x - x).abs() < 1e-2, "{} vs {}", c.worst_x, x);
        assert!(report.check("symmetry").unwrap().passed);
    }
}

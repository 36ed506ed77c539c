//! Truncated Moyal star products: exact on polynomial symbols, by finite
//! differences on sampled symbols.
//!
//! `a # b ~ sum_j c_j` with
//! `c_j = sum_{k1+k2=j} (1/2)^{k1} (-1/2)^{k2} / (k1! k2!) (d_xi^{k1} D_x^{k2} a)(d_xi^{k2} D_x^{k1} b)`
//! and `D_x = -i d_x`.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::symbol_grid::{grade_compose, Axis, GradeOp, GridSymbol};

/// Polynomial symbol `sum c_{ab} x^a xi^b`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolySymbol {
    pub terms: BTreeMap<(u32, u32), Complex64>,
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `n (n-1) ... (n-k+1)`.
fn falling(n: u32, k: u32) -> f64 {
    if k > n {
        0.0
    } else {
        (0..k).map(|j| (n - j) as f64).product()
    }
}

impl PolySymbol {
    pub fn zero() -> Self {
        PolySymbol::default()
    }

    pub fn monomial(a: u32, b: u32, c: Complex64) -> Self {
        let mut p = PolySymbol::zero();
        p.add_term(a, b, c);
        p
    }

    pub fn real_monomial(a: u32, b: u32, c: f64) -> Self {
        Self::monomial(a, b, Complex64::new(c, 0.0))
    }

    pub fn constant(c: f64) -> Self {
        Self::real_monomial(0, 0, c)
    }

    pub fn x() -> Self {
        Self::real_monomial(1, 0, 1.0)
    }

    pub fn xi() -> Self {
        Self::real_monomial(0, 1, 1.0)
    }

    fn add_term(&mut self, a: u32, b: u32, c: Complex64) {
        let e = self.terms.entry((a, b)).or_insert(Complex64::new(0.0, 0.0));
        *e += c;
        if *e == Complex64::new(0.0, 0.0) {
            self.terms.remove(&(a, b));
        }
    }

    pub fn add(&self, other: &PolySymbol) -> PolySymbol {
        let mut out = self.clone();
        for (&(a, b), &c) in &other.terms {
            out.add_term(a, b, c);
        }
        out
    }

    pub fn scale(&self, s: Complex64) -> PolySymbol {
        let mut out = PolySymbol::zero();
        for (&(a, b), &c) in &self.terms {
            out.add_term(a, b, c * s);
        }
        out
    }

    pub fn sub(&self, other: &PolySymbol) -> PolySymbol {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn mul(&self, other: &PolySymbol) -> PolySymbol {
        let mut out = PolySymbol::zero();
        for (&(a, b), &c) in &self.terms {
            for (&(a2, b2), &c2) in &other.terms {
                out.add_term(a + a2, b + b2, c * c2);
            }
        }
        out
    }

    /// `d_xi^{k1} d_x^{k2}`.
    pub fn derivative(&self, k1: u32, k2: u32) -> PolySymbol {
        let mut out = PolySymbol::zero();
        for (&(a, b), &c) in &self.terms {
            let f = falling(a, k2) * falling(b, k1);
            if f != 0.0 {
                out.add_term(a - k2, b - k1, c * f);
            }
        }
        out
    }

    pub fn eval(&self, x: f64, xi: f64) -> Complex64 {
        self.terms
            .iter()
            .map(|(&(a, b), &c)| c * x.powi(a as i32) * xi.powi(b as i32))
            .sum()
    }

    /// Largest coefficient magnitude.
    pub fn max_coefficient(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn is_real(&self) -> bool {
        self.terms.values().all(|c| c.im == 0.0)
    }
}

/// `(-i)^k`.
fn minus_i_pow(k: u32) -> Complex64 {
    match k % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, -1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, 1.0),
    }
}

fn coefficient(k1: u32, k2: u32) -> f64 {
    0.5f64.powi(k1 as i32) * (-0.5f64).powi(k2 as i32) / (factorial(k1) * factorial(k2))
}

/// The `j`-th term of the Moyal expansion of two polynomial symbols.
pub fn moyal_term_poly(a: &PolySymbol, b: &PolySymbol, j: u32) -> PolySymbol {
    let mut out = PolySymbol::zero();
    for k1 in 0..=j {
        let k2 = j - k1;
        // D_x^{k2} on a and D_x^{k1} on b contribute (-i)^{k1+k2}
        let left = a.derivative(k1, k2);
        let right = b.derivative(k2, k1);
        let s = minus_i_pow(j) * coefficient(k1, k2);
        out = out.add(&left.mul(&right).scale(s));
    }
    out
}

/// `sum_{j <= J} c_j`.
pub fn moyal_star_poly(a: &PolySymbol, b: &PolySymbol, j_max: u32) -> PolySymbol {
    (0..=j_max).fold(PolySymbol::zero(), |acc, j| acc.add(&moyal_term_poly(a, b, j)))
}

/// `{a; b} = -d_xi a d_x b + d_xi b d_x a`.
pub fn poisson_poly(a: &PolySymbol, b: &PolySymbol) -> PolySymbol {
    b.derivative(1, 0).mul(&a.derivative(0, 1)).sub(&a.derivative(1, 0).mul(&b.derivative(0, 1)))
}

/// `-i (a # b - b # a)` truncated at `J`.
pub fn moyal_bracket_poly(a: &PolySymbol, b: &PolySymbol, j_max: u32) -> PolySymbol {
    moyal_star_poly(a, b, j_max)
        .sub(&moyal_star_poly(b, a, j_max))
        .scale(Complex64::new(0.0, -1.0))
}

/// Truncated star product of sampled symbols on a shared grid, derivatives by
/// finite differences. The result carries the grade of the leading term.
pub fn moyal_star_truncated(a: &GridSymbol, b: &GridSymbol, j_max: usize) -> Result<GridSymbol> {
    if j_max > 4 {
        return Err(Error::UnsupportedOrder(j_max));
    }
    if !a.same_grid(b) {
        return Err(Error::GridMismatch("star product needs a common grid".into()));
    }
    let mut acc = vec![Complex64::new(0.0, 0.0); a.values.len()];
    for j in 0..=j_max as u32 {
        for k1 in 0..=j {
            let k2 = j - k1;
            let left = a.derivative(Axis::Xi, k1 as usize)?.derivative(Axis::X, k2 as usize)?;
            let right = b.derivative(Axis::Xi, k2 as usize)?.derivative(Axis::X, k1 as usize)?;
            let s = minus_i_pow(j) * coefficient(k1, k2);
            for (o, (u, v)) in acc.iter_mut().zip(left.values.iter().zip(&right.values)) {
                *o += s * u * v;
            }
        }
    }
    let mut out = a.with_values(acc)?;
    out.grade = grade_compose(a.grade, b.grade, GradeOp::ProductTerm(0), a.l);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbol_grid::{symbol_axis, SymbolGrade};

    #[test]
    fn canonical_pair() {
        let s = moyal_star_poly(&PolySymbol::x(), &PolySymbol::xi(), 1);
        let expected = PolySymbol::real_monomial(1, 1, 1.0).add(&PolySymbol::monomial(0, 0, Complex64::new(0.0, 0.5)));
        assert_eq!(s, expected);
        let q = moyal_bracket_poly(&PolySymbol::x(), &PolySymbol::xi(), 1);
        assert_eq!(q, PolySymbol::constant(1.0));
        assert_eq!(poisson_poly(&PolySymbol::x(), &PolySymbol::xi()), PolySymbol::constant(1.0));
    }

    #[test]
    fn quadratics_truncate_after_second_order() {
        let quads = [
            PolySymbol::real_monomial(2, 0, 1.0),
            PolySymbol::real_monomial(0, 2, 1.0),
            PolySymbol::real_monomial(1, 1, 1.0),
            PolySymbol::real_monomial(2, 0, 0.5).add(&PolySymbol::real_monomial(0, 2, 2.0)).add(&PolySymbol::x()),
        ];
        for a in &quads {
            for b in &quads {
                for j in 3..=6 {
                    assert_eq!(moyal_term_poly(a, b, j), PolySymbol::zero());
                }
                assert_eq!(moyal_bracket_poly(a, b, 3), poisson_poly(a, b));
            }
        }
        // the second-order term need not vanish: xi^2 # x^2 has c_2 = -1/2
        let c2 = moyal_term_poly(&PolySymbol::real_monomial(0, 2, 1.0), &PolySymbol::real_monomial(2, 0, 1.0), 2);
        assert_eq!(c2, PolySymbol::constant(-0.5));
    }

    #[test]
    fn grid_star_matches_polynomial_star() {
        let xs = symbol_axis(3.0, 3.0, 0.1);
        let a = PolySymbol::real_monomial(2, 1, 1.0).add(&PolySymbol::x());
        let b = PolySymbol::real_monomial(1, 2, 1.0);
        let ga = GridSymbol::from_complex_fn(xs.clone(), xs.clone(), SymbolGrade::new(0.0, 0.0), 1.0, |x, xi| a.eval(x, xi)).unwrap();
        let gb = GridSymbol::from_complex_fn(xs.clone(), xs.clone(), SymbolGrade::new(0.0, 0.0), 1.0, |x, xi| b.eval(x, xi)).unwrap();
        let g = moyal_star_truncated(&ga, &gb, 3).unwrap();
        let exact = moyal_star_poly(&a, &b, 3);
        let n = xs.len();
        for i in 5..n - 5 {
            for j in 5..n - 5 {
                assert!((g.at(i, j) - exact.eval(xs[i], xs[j])).norm() < 1e-8);
            }
        }
    }
}

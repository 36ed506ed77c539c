//! Operators in the truncated `H0` eigenbasis.

pub mod eigen;
pub mod expm;
pub mod moyal;
pub mod weyl;

use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub use eigen::EigenBasis;
pub use expm::expm;
pub use moyal::{moyal_star_poly, moyal_star_truncated, PolySymbol};
pub use weyl::{weyl_quantize, weyl_quantize_fn, weyl_quantize_poly, WeylOptions};

/// An operator in eigenbasis coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    pub entries: DMatrix<Complex64>,
    pub lambdas: Vec<f64>,
    pub hermitian: bool,
    /// `||M - M*|| / ||M||` in the Frobenius norm.
    pub hermitian_defect: f64,
}

pub fn hermitian_defect(m: &DMatrix<Complex64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (m - m.adjoint()).norm() / norm
}

impl OperatorMatrix {
    pub fn new(entries: DMatrix<Complex64>, lambdas: Vec<f64>) -> Self {
        let defect = hermitian_defect(&entries);
        OperatorMatrix { entries, lambdas, hermitian: defect <= 1e-10, hermitian_defect: defect }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// `diag(lambda_j)`.
    pub fn h0(lambdas: &[f64]) -> Self {
        let n = lambdas.len();
        let d = DMatrix::from_fn(n, n, |i, j| if i == j { Complex64::new(lambdas[i], 0.0) } else { Complex64::new(0.0, 0.0) });
        OperatorMatrix::new(d, lambdas.to_vec())
    }

    const MAGIC: &'static [u8; 4] = b"OPMX";
    const VERSION: u32 = 1;

    /// Little-endian container: magic, version, dimension, eigenvalues, then
    /// row-major `(re, im)` entries.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let n = self.dim();
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(&(n as u64).to_le_bytes())?;
        for j in 0..n {
            let l = self.lambdas.get(j).copied().unwrap_or(f64::NAN);
            w.write_all(&l.to_le_bytes())?;
        }
        for i in 0..n {
            for j in 0..n {
                let c = self.entries[(i, j)];
                w.write_all(&c.re.to_le_bytes())?;
                w.write_all(&c.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Io("not an operator matrix container".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != Self::VERSION {
            return Err(Error::Io(format!("unsupported container version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        let mut f = || -> Result<f64> {
            r.read_exact(&mut b8)?;
            Ok(f64::from_le_bytes(b8))
        };
        let lambdas = (0..n).map(|_| f()).collect::<Result<Vec<_>>>()?;
        let mut entries = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let re = f()?;
                let im = f()?;
                entries[(i, j)] = Complex64::new(re, im);
            }
        }
        Ok(OperatorMatrix::new(entries, lambdas))
    }
}

/// `||psi||_s` with weights `(1 + lambda_j)^{s (l+1) / (2l)}`.
pub fn sobolev_norm(coeffs: &[Complex64], s: f64, basis_lambdas: &[f64], l: f64) -> Result<f64> {
    if coeffs.len() > basis_lambdas.len() {
        return Err(Error::Contract(format!(
            "{} coefficients for a basis of {}",
            coeffs.len(),
            basis_lambdas.len()
        )));
    }
    let e = s * (l + 1.0) / (2.0 * l);
    Ok(coeffs
        .iter()
        .zip(basis_lambdas)
        .map(|(c, &lam)| c.norm_sqr() * (1.0 + lam).powf(2.0 * e))
        .sum::<f64>()
        .sqrt())
}

/// `max |U* U - I|`.
pub fn unitarity_defect(u: &DMatrix<Complex64>) -> f64 {
    let g = u.adjoint() * u;
    let mut m: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let t = if i == j { 1.0 } else { 0.0 };
            m = m.max((g[(i, j)] - Complex64::new(t, 0.0)).norm());
        }
    }
    m
}

/// `e^{i eps X} F e^{-i eps X}` for Hermitian `X`.
pub fn lie_transform_matrix(f: &OperatorMatrix, x: &OperatorMatrix, epsilon: f64) -> Result<OperatorMatrix> {
    if f.dim() != x.dim() {
        return Err(Error::GridMismatch(format!("dimensions {} and {}", f.dim(), x.dim())));
    }
    if x.hermitian_defect > 1e-10 {
        return Err(Error::Contract(format!(
            "generator is not Hermitian (defect {:.3e})",
            x.hermitian_defect
        )));
    }
    let u = expm(&(&x.entries * Complex64::new(0.0, epsilon)));
    let defect = unitarity_defect(&u);
    if defect > 1e-10 {
        return Err(Error::Accuracy { achieved: defect, requested: 1e-10 });
    }
    let out = &u * &f.entries * u.adjoint();
    Ok(OperatorMatrix::new(out, f.lambdas.clone()))
}

//! Eigensystem of `H0 = -d^2/dx^2 + V(x)` on a uniform sinc (Whittaker) grid.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::classical::{turning_point, OrbitGeometry};
use crate::error::{Error, Result};
use crate::potentials::PotentialModel;
use crate::quadrature::adaptive_integrate;

#[derive(Debug, Clone)]
pub struct EigenBasis {
    pub potential: PotentialModel,
    /// Number of eigenpairs computed; the lower half is retained.
    pub n: usize,
    pub grid: Vec<f64>,
    pub dx: f64,
    /// Retained eigenvalues, ascending.
    pub lambdas: Vec<f64>,
    /// Retained eigenvectors as columns, orthonormal in the discrete l2 sense
    /// (`phi_j(x_i) = vectors[(i, j)] / sqrt(dx)`).
    pub vectors: DMatrix<f64>,
    /// Largest relative change of a retained eigenvalue between the two grids.
    pub resolution_defect: f64,
}

/// Kinetic matrix `-d^2/dx^2` on a sinc grid of spacing `dx`.
pub fn kinetic_matrix(n: usize, dx: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            std::f64::consts::PI.powi(2) / (3.0 * dx * dx)
        } else {
            let d = i as f64 - j as f64;
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            2.0 * sign / (dx * dx * d * d)
        }
    })
}

fn uniform_grid(extent: f64, n_grid: usize) -> (Vec<f64>, f64) {
    let dx = 2.0 * extent / (n_grid - 1) as f64;
    ((0..n_grid).map(|i| -extent + i as f64 * dx).collect(), dx)
}

fn solve(p: &PotentialModel, extent: f64, n_grid: usize) -> (Vec<f64>, f64, Vec<f64>, DMatrix<f64>) {
    let (grid, dx) = uniform_grid(extent, n_grid);
    let mut h = kinetic_matrix(n_grid, dx);
    for (i, &x) in grid.iter().enumerate() {
        h[(i, i)] += p.value(x);
    }
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..n_grid).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vecs = DMatrix::zeros(n_grid, n_grid);
    for (col, &k) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        // fix the sign so the first sizeable component is positive
        let lead = v.iter().copied().find(|c| c.abs() > 1e-8).unwrap_or(1.0);
        if lead < 0.0 {
            v = -v;
        }
        vecs.set_column(col, &v);
    }
    (grid, dx, values, vecs)
}

/// Phase-space area `oint xi dx` enclosed by the energy shell `E`.
pub fn shell_area(p: &PotentialModel, energy: f64) -> Result<f64> {
    let geo = OrbitGeometry::new(p, energy)?;
    let f = |t: f64| {
        let s = geo.sample(t);
        s.xi.abs() * geo.q_m * t.cos()
    };
    Ok(4.0 * adaptive_integrate(f, 0.0, 0.5 * std::f64::consts::PI, 1e-12)?)
}

/// Bohr–Sommerfeld estimate of the `j`-th eigenvalue.
pub fn semiclassical_level(p: &PotentialModel, j: usize) -> Result<f64> {
    let target = 2.0 * std::f64::consts::PI * (j as f64 + 0.5);
    let mut lo = p.v0() + 1e-9;
    let mut hi = (p.v0().abs() + 1.0) * 2.0;
    while shell_area(p, hi)? < target {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if shell_area(p, mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Grid half-width and size resolving the lowest `n` states.
pub fn default_discretization(p: &PotentialModel, n: usize) -> Result<(f64, usize)> {
    let e = 1.1 * semiclassical_level(p, n)?;
    let q = turning_point(p, e)?;
    // continue past the turning point until the WKB decay exponent reaches 40
    let mut x = q;
    let mut action = 0.0;
    let step = 0.01 * q.max(1.0);
    while action < 40.0 {
        let k = (p.value(x + 0.5 * step) - e).max(0.0).sqrt();
        action += k * step;
        x += step;
    }
    let dx = std::f64::consts::PI / (2.5 * e.sqrt() + 5.0);
    let n_grid = ((2.0 * x / dx).ceil() as usize + 1).max(4 * n);
    Ok((x, n_grid))
}

impl EigenBasis {
    /// Dense eigensolve on `n_grid` points over `[-extent, extent]`, verified
    /// against a grid 1.5 times finer.
    pub fn new(p: &PotentialModel, n: usize, extent: f64, n_grid: usize) -> Result<Self> {
        if n < 2 || n_grid < 4 * n {
            return Err(Error::Contract(format!("need n >= 2 and n_grid >= 4n, got n = {n}, n_grid = {n_grid}")));
        }
        let dim = n / 2;
        let (grid, dx, values, vecs) = solve(p, extent, n_grid);
        let (_, _, fine, _) = solve(p, extent, n_grid * 3 / 2);
        let mut defect: f64 = 0.0;
        for j in 0..dim {
            defect = defect.max((values[j] - fine[j]).abs() / values[j].abs().max(1.0));
        }
        if defect > 1e-7 {
            return Err(Error::Resolution(format!(
                "retained eigenvalues move by {defect:.3e} between grids of {n_grid} and {} points",
                n_grid * 3 / 2
            )));
        }
        Ok(EigenBasis {
            potential: p.clone(),
            n,
            grid,
            dx,
            lambdas: values[..dim].to_vec(),
            vectors: vecs.columns(0, dim).into_owned(),
            resolution_defect: defect,
        })
    }

    /// [`EigenBasis::new`] with [`default_discretization`].
    pub fn auto(p: &PotentialModel, n: usize) -> Result<Self> {
        let (extent, n_grid) = default_discretization(p, n)?;
        Self::new(p, n, extent, n_grid)
    }

    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    /// The discretised `H0` on the grid.
    pub fn grid_hamiltonian(&self) -> DMatrix<f64> {
        let mut h = kinetic_matrix(self.grid.len(), self.dx);
        for (i, &x) in self.grid.iter().enumerate() {
            h[(i, i)] += self.potential.value(x);
        }
        h
    }

    /// `max_j ||H0 phi_j - lambda_j phi_j|| / lambda_j` over retained states.
    pub fn residual(&self) -> f64 {
        let h = self.grid_hamiltonian();
        let hv = &h * &self.vectors;
        (0..self.dim())
            .map(|j| (hv.column(j) - self.vectors.column(j) * self.lambdas[j]).norm() / self.lambdas[j].abs().max(1.0))
            .fold(0.0, f64::max)
    }

    /// `max |V^T V - I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.vectors.transpose() * &self.vectors;
        let mut m: f64 = 0.0;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                m = m.max((g[(i, j)] - target).abs());
            }
        }
        m
    }
}

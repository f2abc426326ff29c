//! Squared-inverse elliptic Gaussian prior with a Robin boundary.
//!
//! The operator is assembled as a vertex-centred finite-volume form of
//! `-rho Lap + delta` with the boundary term `beta * m` on the boundary dual
//! faces, then scaled symmetrically by the lumped (unit interior) cell areas.
//! Interior rows reduce to the 5-point stencil and the matrix is exactly
//! symmetric, so `Gamma = A^-2` and `Gamma^{1/2} = A^-1`.

use faer::sparse::linalg::solvers::Llt;
use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::counters::SolveCounter;
use crate::error::{OedError, Result};
use crate::grid::{Field, Grid};
use crate::linalg::{SparseMatrix, TripletBuilder};
use crate::seed;

/// Robin coefficient tied to the prior's correlation length.
pub fn robin_beta(rho: f64, delta: f64) -> f64 {
    rho / 1.42 * (delta / rho).sqrt()
}

pub struct PriorModel {
    grid: Grid,
    pub rho: f64,
    pub delta: f64,
    pub beta: f64,
    pub mean: Field,
    a: SparseMatrix,
    llt: Llt<usize, f64>,
    counter: SolveCounter,
}

impl std::fmt::Debug for PriorModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PriorModel")
            .field("grid", &self.grid)
            .field("rho", &self.rho)
            .field("delta", &self.delta)
            .field("beta", &self.beta)
            .finish_non_exhaustive()
    }
}

impl PriorModel {
    pub fn new(grid: Grid, rho: f64, delta: f64, mean: Field) -> Result<Self> {
        Self::with_beta(grid, rho, delta, robin_beta(rho, delta), mean)
    }

    /// Same as [`PriorModel::new`] with an explicit Robin coefficient
    /// (`beta = 0` gives a pure Neumann boundary).
    pub fn with_beta(grid: Grid, rho: f64, delta: f64, beta: f64, mean: Field) -> Result<Self> {
        for (name, v) in [("rho", rho), ("delta", delta)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(OedError::invalid(name, format!("must be finite and positive, got {v}")));
            }
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(OedError::invalid("beta", format!("must be finite and nonnegative, got {beta}")));
        }
        mean.check_grid(&grid, "prior mean")?;
        let a = assemble(&grid, rho, delta, beta)?;
        let asym = a.asymmetry();
        assert!(asym == 0.0, "prior operator asymmetric by {asym}");
        let llt = a
            .csc()
            .sp_cholesky(Side::Lower)
            .map_err(|e| OedError::Solver(format!("prior Cholesky failed: {e:?}")))?;
        Ok(Self { grid, rho, delta, beta, mean, a, llt, counter: SolveCounter::new() })
    }

    pub fn with_counter(mut self, counter: SolveCounter) -> Self {
        self.counter = counter;
        self
    }

    pub fn counter(&self) -> &SolveCounter {
        &self.counter
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn operator(&self) -> &SparseMatrix {
        &self.a
    }

    /// `A^-1 X` for a block of columns.
    pub fn solve_mat(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        OedError::check_dim("prior solve", self.n(), x.nrows())?;
        let mut y = x.to_owned();
        self.llt.solve_in_place(y.as_mut());
        self.counter.add(x.ncols());
        Ok(y)
    }

    pub fn apply_sqrt_cov_mat(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        self.solve_mat(x)
    }

    pub fn apply_cov_mat(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        let y = self.solve_mat(x)?;
        self.solve_mat(y.as_ref())
    }

    pub fn apply_sqrt_cov(&self, v: &[f64]) -> Result<Vec<f64>> {
        let y = self.solve_mat(MatRef::from_column_major_slice(v, v.len(), 1))?;
        Ok(y.col_as_slice(0).to_vec())
    }

    pub fn apply_cov(&self, v: &[f64]) -> Result<Vec<f64>> {
        let y = self.apply_cov_mat(MatRef::from_column_major_slice(v, v.len(), 1))?;
        Ok(y.col_as_slice(0).to_vec())
    }

    /// `A v` (no solve).
    pub fn apply_operator(&self, v: &[f64]) -> Result<Vec<f64>> {
        OedError::check_dim("prior operator", self.n(), v.len())?;
        Ok(self.a.mul_vec(v))
    }

    /// `mean + A^-1 z` with `z` standard normal drawn from `seed`.
    pub fn sample_field(&self, seed: u64) -> Field {
        self.sample_with(&mut seed::rng(seed))
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Field {
        let z: Vec<f64> = (0..self.n()).map(|_| rng.sample(StandardNormal)).collect();
        let mut v = self.apply_sqrt_cov(&z).expect("dimension fixed by construction");
        for (vi, mi) in v.iter_mut().zip(&self.mean.values) {
            *vi += mi;
        }
        Field::new(v)
    }

    /// Diagonal of `A^-2` (pointwise prior variance), via `n` solves in blocks.
    pub fn cov_diagonal(&self) -> Vec<f64> {
        let n = self.n();
        let mut diag = vec![0.0; n];
        const BLOCK: usize = 64;
        let mut start = 0;
        while start < n {
            let w = BLOCK.min(n - start);
            let e = Mat::from_fn(n, w, |i, j| if i == start + j { 1.0 } else { 0.0 });
            let x = self.solve_mat(e.as_ref()).expect("dimension fixed by construction");
            for j in 0..w {
                diag[start + j] = x.col_as_slice(j).iter().map(|v| v * v).sum();
            }
            start += w;
        }
        diag
    }

    pub fn trace_cov(&self) -> f64 {
        self.cov_diagonal().iter().sum()
    }
}

/// Lumped dual-cell area relative to a full interior cell: 1, 1/2 or 1/4.
fn cell_weights(grid: &Grid) -> (Vec<f64>, Vec<f64>) {
    let side = |n: usize| -> Vec<f64> {
        (0..n).map(|i| if i == 0 || i == n - 1 { 0.5 } else { 1.0 }).collect()
    };
    (side(grid.nx), side(grid.ny))
}

fn assemble(grid: &Grid, rho: f64, delta: f64, beta: f64) -> Result<SparseMatrix> {
    let (nx, ny) = (grid.nx, grid.ny);
    let (hx, hy) = (grid.hx(), grid.hy());
    let (wx, wy) = cell_weights(grid);
    let mass: Vec<f64> = (0..grid.n()).map(|k| wx[k % nx] * wy[k / nx]).collect();
    let scale: Vec<f64> = mass.iter().map(|m| 1.0 / m.sqrt()).collect();

    // Entries of the finite-volume form divided by hx*hy, before the
    // symmetric mass scaling.
    let mut b = TripletBuilder::new(grid.n(), grid.n());
    let mut couple = |p: usize, q: usize, c: f64| {
        b.add(p, p, c * scale[p] * scale[p]);
        b.add(q, q, c * scale[q] * scale[q]);
        b.add(p, q, -c * scale[p] * scale[q]);
        b.add(q, p, -c * scale[q] * scale[p]);
    };
    for j in 0..ny {
        for i in 0..nx {
            let p = grid.index(i, j);
            if i + 1 < nx {
                couple(p, grid.index(i + 1, j), rho * wy[j] / (hx * hx));
            }
            if j + 1 < ny {
                couple(p, grid.index(i, j + 1), rho * wx[i] / (hy * hy));
            }
        }
    }
    for j in 0..ny {
        for i in 0..nx {
            let p = grid.index(i, j);
            let mut diag = delta * mass[p];
            if i == 0 || i == nx - 1 {
                diag += beta * wy[j] / hx;
            }
            if j == 0 || j == ny - 1 {
                diag += beta * wx[i] / hy;
            }
            b.add(p, p, diag * scale[p] * scale[p]);
        }
    }
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn robin_formula() {
        let beta = robin_beta(0.008, 0.02);
        assert!((beta - 0.008 / 1.42 * 2.5f64.sqrt()).abs() < 1e-16);
        assert!((beta - 0.008_907_824_394_840_5).abs() < 1e-15);
    }

    #[test]
    fn interior_rows_are_five_point() {
        let g = Grid::new(6, 5, 1.0, 1.0).unwrap();
        let (rho, delta) = (0.3, 2.0);
        let p = PriorModel::new(g, rho, delta, Field::zeros(g.n())).unwrap();
        let a = p.operator().to_dense();
        let k = g.index(2, 2);
        let (hx, hy) = (g.hx(), g.hy());
        assert!((a[(k, k)] - (2.0 * rho / (hx * hx) + 2.0 * rho / (hy * hy) + delta)).abs() < 1e-10);
        assert!((a[(k, k + 1)] + rho / (hx * hx)).abs() < 1e-12);
        assert!((a[(k, k + g.nx)] + rho / (hy * hy)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        let g = Grid::new(4, 4, 1.0, 1.0).unwrap();
        assert!(PriorModel::new(g, 0.0, 1.0, Field::zeros(16)).is_err());
        assert!(PriorModel::new(g, 1.0, f64::NAN, Field::zeros(16)).is_err());
        assert!(PriorModel::new(g, 1.0, 1.0, Field::zeros(15)).is_err());
    }

    #[test]
    fn counts_solves() {
        let g = Grid::new(4, 4, 1.0, 1.0).unwrap();
        let p = PriorModel::new(g, 1.0, 1.0, Field::zeros(16)).unwrap();
        p.apply_cov(&[1.0; 16]).unwrap();
        assert_eq!(p.counter().get(), 2);
    }
}

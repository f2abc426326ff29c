//! Small linear-algebra layer over `faer`: sparse assembly, the block
//! linear-map abstraction used by the range finder, and dense helpers.

use std::collections::BTreeMap;

use faer::linalg::matmul::matmul;
use faer::sparse::linalg::matmul::sparse_dense_matmul;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Accum, Mat, MatRef, Par};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{OedError, Result};

/// Accumulates `(row, col, value)` contributions, summing duplicates.
#[derive(Debug, Default)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: BTreeMap<(usize, usize), f64>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        *self.entries.entry((row, col)).or_insert(0.0) += val;
    }

    pub fn build(self) -> Result<SparseMatrix> {
        let triplets: Vec<_> = self
            .entries
            .iter()
            .map(|(&(r, c), &v)| Triplet::new(r, c, v))
            .collect();
        let inner = SparseColMat::<usize, f64>::try_new_from_triplets(
            self.nrows, self.ncols, &triplets,
        )
        .map_err(|e| OedError::Solver(format!("sparse assembly failed: {e:?}")))?;
        Ok(SparseMatrix {
            inner,
            entries: self.entries.into_iter().map(|((r, c), v)| (r, c, v)).collect(),
        })
    }
}

/// Sparse matrix in compressed-column form, plus the coordinate list it was
/// assembled from (kept for symmetry audits and dense test oracles).
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    inner: SparseColMat<usize, f64>,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn nrows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn csc(&self) -> &SparseColMat<usize, f64> {
        &self.inner
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// `y = A x` for a block of columns.
    pub fn mul_mat(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        let mut y = Mat::zeros(self.nrows(), x.ncols());
        sparse_dense_matmul(y.as_mut(), Accum::Replace, self.inner.as_ref(), x, 1.0, Par::Seq);
        y
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows()];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    /// Largest `|A_ij - A_ji|` over stored entries.
    pub fn asymmetry(&self) -> f64 {
        let map: BTreeMap<(usize, usize), f64> =
            self.entries.iter().map(|&(r, c, v)| ((r, c), v)).collect();
        map.iter()
            .map(|(&(r, c), &v)| (v - map.get(&(c, r)).copied().unwrap_or(0.0)).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.nrows(), self.ncols());
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }
}

/// A linear map applied to blocks of vectors, with its transpose.
///
/// The range finder and inner-matrix code only ever touch operators through
/// this trait, so a PDE-backed map and a dense test matrix are interchangeable.
pub trait LinearMap: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: MatRef<'_, f64>) -> Mat<f64>;
    fn apply_transpose(&self, y: MatRef<'_, f64>) -> Mat<f64>;
}

impl LinearMap for Mat<f64> {
    fn nrows(&self) -> usize {
        Mat::nrows(self)
    }

    fn ncols(&self) -> usize {
        Mat::ncols(self)
    }

    fn apply(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        self * x
    }

    fn apply_transpose(&self, y: MatRef<'_, f64>) -> Mat<f64> {
        self.transpose() * y
    }
}

impl<T: LinearMap + ?Sized> LinearMap for &T {
    fn nrows(&self) -> usize {
        (**self).nrows()
    }
    fn ncols(&self) -> usize {
        (**self).ncols()
    }
    fn apply(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        (**self).apply(x)
    }
    fn apply_transpose(&self, y: MatRef<'_, f64>) -> Mat<f64> {
        (**self).apply_transpose(y)
    }
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, nrows: usize, ncols: usize) -> Mat<f64> {
    let mut m = Mat::zeros(nrows, ncols);
    for j in 0..ncols {
        for i in 0..nrows {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

pub fn col_vec(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

pub fn col_to_vec(m: MatRef<'_, f64>, j: usize) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, j)]).collect()
}

/// `(X + X^T) / 2`.
pub fn symmetrize(x: &mut Mat<f64>) {
    let n = x.nrows();
    for j in 0..n {
        for i in 0..j {
            let avg = 0.5 * (x[(i, j)] + x[(j, i)]);
            x[(i, j)] = avg;
            x[(j, i)] = avg;
        }
    }
}

pub fn max_abs(x: MatRef<'_, f64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            m = m.max(x[(i, j)].abs());
        }
    }
    m
}

/// `max |Q^T Q - I|`.
pub fn orthonormality_error(q: MatRef<'_, f64>) -> f64 {
    let mut g = Mat::zeros(q.ncols(), q.ncols());
    matmul(g.as_mut(), Accum::Replace, q.transpose(), q, 1.0, Par::Seq);
    for i in 0..q.ncols() {
        g[(i, i)] -= 1.0;
    }
    max_abs(g.as_ref())
}

pub fn trace(x: MatRef<'_, f64>) -> f64 {
    (0..x.nrows().min(x.ncols())).map(|i| x[(i, i)]).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn frobenius(x: MatRef<'_, f64>) -> f64 {
    x.norm_l2()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_sums_duplicates() {
        let mut b = TripletBuilder::new(2, 2);
        b.add(0, 0, 1.0);
        b.add(0, 0, 2.0);
        b.add(1, 0, -1.0);
        let m = b.build().unwrap();
        let d = m.to_dense();
        assert_eq!(d[(0, 0)], 3.0);
        assert_eq!(d[(1, 0)], -1.0);
        assert!(m.asymmetry() > 0.0);
        let y = m.mul_mat(col_vec(&[1.0, 1.0]).as_ref());
        assert_eq!(col_to_vec(y.as_ref(), 0), m.mul_vec(&[1.0, 1.0]));
    }

    #[test]
    fn symmetrize_averages() {
        let mut x = Mat::from_fn(3, 3, |i, j| (i * 3 + j) as f64);
        symmetrize(&mut x);
        assert_eq!(x[(0, 2)], x[(2, 0)]);
        assert_eq!(x[(0, 2)], 4.0);
    }
}

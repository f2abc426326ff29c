//! Observation-space Gramians `G = F Gamma F^T` and `H = F Gamma^2 F^T`.

use faer::{Mat, MatRef};

use crate::error::{OedError, Result};
use crate::linalg::symmetrize;
use crate::prior::PriorModel;
use crate::reduction::ReducedForward;
use crate::transport::ForwardOperator;

/// Dense `d x d` Gramians of one sample.
#[derive(Debug, Clone)]
pub struct ObservationGramians {
    pub g: Mat<f64>,
    pub h: Mat<f64>,
}

/// Gramians in factored form: `G = U U^T`, `H = U C U^T` with `C` symmetric
/// positive semidefinite and `U` of full column rank.
#[derive(Debug, Clone)]
pub struct LowRankGramians {
    pub u: Mat<f64>,
    pub c: Mat<f64>,
}

impl LowRankGramians {
    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn d(&self) -> usize {
        self.u.nrows()
    }

    pub fn dense(&self) -> ObservationGramians {
        let mut g = &self.u * self.u.transpose();
        let mut h = &self.u * (&self.c * self.u.transpose());
        symmetrize(&mut g);
        symmetrize(&mut h);
        ObservationGramians { g, h }
    }

    /// Gramians of a subset of the observations (principal submatrices).
    pub fn restrict_rows(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.d()) {
            return Err(OedError::invalid("rows", format!("row {bad} out of range for d = {}", self.d())));
        }
        let u = Mat::from_fn(rows.len(), self.rank(), |i, j| self.u[(rows[i], j)]);
        Ok(Self { u, c: self.c.clone() })
    }

    /// Factored Gramians of a surrogate `Q B Q_hat^T` given the prior Gram
    /// `Q_hat^T Gamma Q_hat`. The factor `Q B` is compressed by a thin SVD,
    /// dropping singular values below `rel_tol` times the largest.
    pub fn from_reduced(q: MatRef<'_, f64>, b: MatRef<'_, f64>, prior_gram: MatRef<'_, f64>, rel_tol: f64) -> Result<Self> {
        OedError::check_dim("core/basis columns", q.ncols(), b.nrows())?;
        OedError::check_dim("prior Gram size", b.ncols(), prior_gram.nrows())?;
        let d = q.nrows();
        let qb = q * b;
        if qb.ncols() == 0 {
            return Ok(Self { u: Mat::zeros(d, 0), c: Mat::zeros(0, 0) });
        }
        let svd = qb.thin_svd().map_err(|e| OedError::Solver(format!("SVD failed: {e:?}")))?;
        let sv: Vec<f64> = svd.S().column_vector().iter().copied().collect();
        let s1 = sv.first().copied().unwrap_or(0.0);
        let keep = sv.iter().take_while(|&&s| s1 > 0.0 && s > rel_tol * s1).count();
        let u = Mat::from_fn(d, keep, |i, j| svd.U()[(i, j)] * sv[j]);
        let v = svd.V().subcols(0, keep);
        let mut c = v.transpose() * (prior_gram * v);
        symmetrize(&mut c);
        Ok(Self { u, c })
    }
}

/// `Q_hat^T Gamma Q_hat = X^T X` with `X = A^-1 Q_hat`.
pub fn prior_gram(prior: &PriorModel, q_hat: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let x = prior.apply_sqrt_cov_mat(q_hat)?;
    let mut c = x.transpose() * &x;
    symmetrize(&mut c);
    Ok(c)
}

/// Dense Gramians of a surrogate: `G = Q B B^T Q^T`, `H = Q B C B^T Q^T`.
pub fn gramians(rf: &ReducedForward, prior_gram: MatRef<'_, f64>) -> Result<ObservationGramians> {
    OedError::check_dim("prior Gram size", rf.b.ncols(), prior_gram.nrows())?;
    let qb = rf.q.as_ref() * &rf.b;
    let mut g = &qb * qb.transpose();
    let mut h = &qb * (prior_gram * qb.transpose());
    symmetrize(&mut g);
    symmetrize(&mut h);
    Ok(ObservationGramians { g, h })
}

/// Gramians of the full operator: `G = X^T X`, `H = Z^T Z` with
/// `X = A^-1 F^T` and `Z = A^-1 X` (`d` transposed sweeps, `2d` prior solves).
pub fn exact_gramians(forward: &ForwardOperator, prior: &PriorModel) -> Result<ObservationGramians> {
    let d = forward.d();
    let ft = forward.apply_transpose_mat(Mat::<f64>::identity(d, d).as_ref())?;
    let x = prior.apply_sqrt_cov_mat(ft.as_ref())?;
    let z = prior.apply_sqrt_cov_mat(x.as_ref())?;
    let mut g = x.transpose() * &x;
    let mut h = z.transpose() * &z;
    symmetrize(&mut g);
    symmetrize(&mut h);
    Ok(ObservationGramians { g, h })
}

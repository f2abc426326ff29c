//! Posterior diagnostics with the full forward operator: MAP point,
//! pointwise variance and the exact criterion.
//!
//! Everything goes through the observation-space form
//! `Gamma_post = Gamma - Z^T S^-1 W_sigma Z` with `Z = F Gamma` (stored as
//! its transpose `n x d`), so only `d` transposed sweeps and `2d` prior
//! solves are needed.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef};

use crate::error::{OedError, Result};
use crate::grid::Field;
use crate::linalg::symmetrize;
use crate::prior::PriorModel;
use crate::reduction::ObservationGramians;
use crate::transport::ForwardOperator;

pub struct ExactPosterior<'a> {
    pub forward: &'a ForwardOperator,
    pub prior: &'a PriorModel,
    pub sigma: f64,
    /// `Gamma F^T` (`n x d`).
    gamma_ft: Mat<f64>,
    gramians: ObservationGramians,
}

impl<'a> ExactPosterior<'a> {
    pub fn new(forward: &'a ForwardOperator, prior: &'a PriorModel, sigma: f64) -> Result<Self> {
        const LIMIT: usize = 5000;
        if prior.n() > LIMIT {
            return Err(OedError::SizeGuard { what: "exact posterior", size: prior.n(), limit: LIMIT });
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(OedError::invalid("sigma", format!("must be positive, got {sigma}")));
        }
        OedError::check_dim("posterior grid", prior.n(), forward.n())?;
        let d = forward.d();
        let ft = forward.apply_transpose_mat(Mat::<f64>::identity(d, d).as_ref())?;
        let x = prior.apply_sqrt_cov_mat(ft.as_ref())?;
        let gamma_ft = prior.apply_sqrt_cov_mat(x.as_ref())?;
        let mut g = x.transpose() * &x;
        let mut h = gamma_ft.transpose() * &gamma_ft;
        symmetrize(&mut g);
        symmetrize(&mut h);
        Ok(Self { forward, prior, sigma, gamma_ft, gramians: ObservationGramians { g, h } })
    }

    pub fn gramians(&self) -> &ObservationGramians {
        &self.gramians
    }

    fn expanded(&self, w: &[f64]) -> Result<Vec<f64>> {
        let s = self.forward.s();
        OedError::check_dim("design vector", s, w.len())?;
        let inv = 1.0 / (self.sigma * self.sigma);
        Ok((0..self.forward.d()).map(|i| inv * w[i % s]).collect())
    }

    /// `S^-1 W_sigma`, symmetric.
    fn weighted_inverse(&self, ws: &[f64]) -> Mat<f64> {
        let d = ws.len();
        let g = &self.gramians.g;
        let s = Mat::from_fn(d, d, |i, j| ws[i] * g[(i, j)] + if i == j { 1.0 } else { 0.0 });
        let mut k = s.partial_piv_lu().solve(Mat::from_fn(d, d, |i, j| if i == j { ws[i] } else { 0.0 }));
        symmetrize(&mut k);
        k
    }

    /// Posterior mean `m_pr + Gamma F^T S^-1 W_sigma (data - F m_pr)`.
    pub fn map_point(&self, w: &[f64], data: &[f64]) -> Result<Field> {
        let ws = self.expanded(w)?;
        OedError::check_dim("data", self.forward.d(), data.len())?;
        let fm = self.forward.apply(&self.prior.mean)?;
        let resid = Mat::from_fn(data.len(), 1, |i, _| data[i] - fm[i]);
        let k = self.weighted_inverse(&ws);
        let upd = &self.gamma_ft * (&k * &resid);
        Ok(Field::new(self.prior.mean.values.iter().enumerate().map(|(i, m)| m + upd[(i, 0)]).collect()))
    }

    /// Gradient of the negative log posterior,
    /// `F^T W_sigma (F m - data) + A^2 (m - m_pr)`.
    pub fn neg_log_posterior_gradient(&self, w: &[f64], data: &[f64], m: &Field) -> Result<Vec<f64>> {
        let ws = self.expanded(w)?;
        let fm = self.forward.apply(m)?;
        let r: Vec<f64> = (0..fm.len()).map(|i| ws[i] * (fm[i] - data[i])).collect();
        let misfit = self.forward.apply_transpose(&r)?;
        let dm: Vec<f64> = m.values.iter().zip(&self.prior.mean.values).map(|(a, b)| a - b).collect();
        let reg = self.prior.apply_operator(&self.prior.apply_operator(&dm)?)?;
        Ok(misfit.values.iter().zip(&reg).map(|(a, b)| a + b).collect())
    }

    /// `diag(Gamma_post)`, given `diag(Gamma)`.
    pub fn pointwise_variance(&self, w: &[f64], prior_diag: &[f64]) -> Result<Field> {
        let ws = self.expanded(w)?;
        OedError::check_dim("prior variance", self.prior.n(), prior_diag.len())?;
        let k = self.weighted_inverse(&ws);
        let zk = &self.gamma_ft * &k;
        let z = self.gamma_ft.as_ref();
        Ok(Field::new(
            (0..prior_diag.len())
                .map(|p| {
                    let red: f64 = (0..z.ncols()).map(|j| zk[(p, j)] * z[(p, j)]).sum();
                    (prior_diag[p] - red).max(0.0)
                })
                .collect(),
        ))
    }

    /// `tr K = tr[S^-1 W_sigma H]` from the exact Gramians.
    pub fn trace_update(&self, w: &[f64]) -> Result<f64> {
        let ws = self.expanded(w)?;
        let k = self.weighted_inverse(&ws);
        Ok(trace_product(k.as_ref(), self.gramians.h.as_ref()))
    }
}

fn trace_product(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    let mut t = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            t += a[(i, j)] * b[(j, i)];
        }
    }
    t
}

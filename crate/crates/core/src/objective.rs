//! Sample-average A-optimal criterion in observation space and its gradient.
//!
//! For sample `i` with Gramians `G = F Gamma F^T`, `H = F Gamma^2 F^T` and
//! design weights expanded to `W_sigma = sigma^-2 (I_r kron diag(w))`, the
//! trace update is `tr[S^-1 W_sigma H]` with `S = I + W_sigma G`, and the
//! objective is `phi_N(w) = -(1/N) sum_i tr K_i`. Observation index `t*s + l`
//! is sensor `l` at time `t`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{Mat, Side};
use rayon::prelude::*;

use crate::error::{OedError, Result};
use crate::reduction::{LowRankGramians, ObservationGramians};

/// One sample's data for the criterion.
#[derive(Debug, Clone)]
pub enum SampleTerm {
    Dense(ObservationGramians),
    LowRank(LowRankGramians),
}

impl SampleTerm {
    pub fn d(&self) -> usize {
        match self {
            SampleTerm::Dense(g) => g.g.nrows(),
            SampleTerm::LowRank(l) => l.d(),
        }
    }

    pub fn dense(&self) -> ObservationGramians {
        match self {
            SampleTerm::Dense(g) => g.clone(),
            SampleTerm::LowRank(l) => l.dense(),
        }
    }
}

/// Value and gradient with respect to the expanded weights `W_sigma`
/// (`d` entries), before the `-(1/N)` factor and the time aggregation.
struct TermEval {
    trace: f64,
    grad_expanded: Vec<f64>,
}

fn lu_of_s(g: &ObservationGramians, ws: &[f64]) -> PartialPivLu<f64> {
    let d = ws.len();
    let s = Mat::from_fn(d, d, |i, j| ws[i] * g.g[(i, j)] + if i == j { 1.0 } else { 0.0 });
    s.partial_piv_lu()
}

fn dense_trace(g: &ObservationGramians, ws: &[f64]) -> f64 {
    let lu = lu_of_s(g, ws);
    let wh = Mat::from_fn(ws.len(), ws.len(), |i, j| ws[i] * g.h[(i, j)]);
    let x = lu.solve(&wh);
    (0..ws.len()).map(|i| x[(i, i)]).sum()
}

fn dense_eval(g: &ObservationGramians, ws: &[f64], with_grad: bool) -> TermEval {
    let d = ws.len();
    let lu = lu_of_s(g, ws);
    // Z = H S^-1 = (S^-T H)^T.
    let z = lu.solve_transpose(&g.h).transpose().to_owned();
    let trace = (0..d).map(|i| ws[i] * z[(i, i)]).sum();
    if !with_grad {
        return TermEval { trace, grad_expanded: Vec::new() };
    }
    // diag of Z - G S^-1 W_sigma Z.
    let wz = Mat::from_fn(d, d, |i, j| ws[i] * z[(i, j)]);
    let t = lu.solve(&wz);
    let grad_expanded = (0..d)
        .map(|i| {
            let gt: f64 = (0..d).map(|j| g.g[(i, j)] * t[(j, i)]).sum();
            z[(i, i)] - gt
        })
        .collect();
    TermEval { trace, grad_expanded }
}

fn low_rank_eval(l: &LowRankGramians, ws: &[f64], with_grad: bool) -> Result<TermEval> {
    let (d, k) = (l.d(), l.rank());
    if k == 0 {
        return Ok(TermEval { trace: 0.0, grad_expanded: vec![0.0; d] });
    }
    let u = &l.u;
    let mut wu = u.clone();
    for j in 0..k {
        for (v, w) in wu.col_as_slice_mut(j).iter_mut().zip(ws) {
            *v *= w;
        }
    }
    let mut ip = u.transpose() * &wu;
    for i in 0..k {
        ip[(i, i)] += 1.0;
    }
    let llt = ip
        .llt(Side::Lower)
        .map_err(|e| OedError::Solver(format!("Cholesky of I + U^T W U failed: {e:?}")))?;
    // tr[P Y] with P = U^T W U and Y = (I + P)^-1 C.
    let y = llt.solve(&l.c);
    let trace = frobenius_dot(&ip, &y.transpose().to_owned()) - (0..k).map(|i| y[(i, i)]).sum::<f64>();
    if !with_grad {
        return Ok(TermEval { trace, grad_expanded: Vec::new() });
    }
    // d/dW_ii of the trace is u_i^T R u_i with R = (I + P)^-1 C (I + P)^-1.
    let rm = llt.solve(y.transpose());
    let ur = u * &rm;
    let mut grad_expanded = vec![0.0; d];
    for j in 0..k {
        for ((g, a), b) in grad_expanded.iter_mut().zip(ur.col_as_slice(j)).zip(u.col_as_slice(j)) {
            *g += a * b;
        }
    }
    Ok(TermEval { trace, grad_expanded })
}

fn frobenius_dot(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.col_as_slice(j).iter().zip(b.col_as_slice(j)).map(|(x, y)| x * y).sum::<f64>())
        .sum()
}

/// Sample-average criterion over fixed samples.
#[derive(Debug)]
pub struct SaaProblem {
    terms: Vec<Arc<SampleTerm>>,
    pub sigma: f64,
    s: usize,
    r: usize,
    evaluations: AtomicU64,
}

impl Clone for SaaProblem {
    fn clone(&self) -> Self {
        Self { terms: self.terms.clone(), sigma: self.sigma, s: self.s, r: self.r, evaluations: AtomicU64::new(0) }
    }
}

impl SaaProblem {
    pub fn new(terms: Vec<SampleTerm>, sigma: f64, s: usize, r: usize) -> Result<Self> {
        Self::from_shared(terms.into_iter().map(Arc::new).collect(), sigma, s, r)
    }

    pub fn from_shared(terms: Vec<Arc<SampleTerm>>, sigma: f64, s: usize, r: usize) -> Result<Self> {
        if terms.is_empty() {
            return Err(OedError::Empty("sample Gramians"));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(OedError::invalid("sigma", format!("must be positive, got {sigma}")));
        }
        if s == 0 || r == 0 {
            return Err(OedError::invalid("dimensions", "need s >= 1 and r >= 1"));
        }
        for t in &terms {
            OedError::check_dim("Gramian size", s * r, t.d())?;
        }
        Ok(Self { terms, sigma, s, r, evaluations: AtomicU64::new(0) })
    }

    pub fn dense(gramians: Vec<ObservationGramians>, sigma: f64, s: usize, r: usize) -> Result<Self> {
        Self::new(gramians.into_iter().map(SampleTerm::Dense).collect(), sigma, s, r)
    }

    pub fn low_rank(gramians: Vec<LowRankGramians>, sigma: f64, s: usize, r: usize) -> Result<Self> {
        Self::new(gramians.into_iter().map(SampleTerm::LowRank).collect(), sigma, s, r)
    }

    /// Problem over a subset of the samples (shares the data).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let terms = indices
            .iter()
            .map(|&i| self.terms.get(i).cloned().ok_or(OedError::invalid("sample index", format!("{i} out of range"))))
            .collect::<Result<Vec<_>>>()?;
        Self::from_shared(terms, self.sigma, self.s, self.r)
    }

    /// Same samples, every term converted to dense Gramians.
    pub fn to_dense(&self) -> Self {
        let terms = self.terms.iter().map(|t| Arc::new(SampleTerm::Dense(t.dense()))).collect();
        Self::from_shared(terms, self.sigma, self.s, self.r).expect("validated on construction")
    }

    pub fn terms(&self) -> &[Arc<SampleTerm>] {
        &self.terms
    }

    pub fn n_samples(&self) -> usize {
        self.terms.len()
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn d(&self) -> usize {
        self.s * self.r
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    fn check_design(&self, w: &[f64]) -> Result<()> {
        OedError::check_dim("design vector", self.s, w.len())?;
        if let Some(&bad) = w.iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
            return Err(OedError::invalid("w", format!("weights must lie in [0, 1], found {bad}")));
        }
        Ok(())
    }

    /// `sigma^-2 w` repeated over the observation times.
    pub fn expanded_weights(&self, w: &[f64]) -> Vec<f64> {
        let inv = 1.0 / (self.sigma * self.sigma);
        (0..self.d()).map(|i| inv * w[i % self.s]).collect()
    }

    /// `S_i(w) = I + sigma^-2 W G_i`.
    pub fn s_matrix(&self, i: usize, w: &[f64]) -> Result<Mat<f64>> {
        self.check_design(w)?;
        let g = self.terms[i].dense();
        let ws = self.expanded_weights(w);
        let d = self.d();
        Ok(Mat::from_fn(d, d, |a, b| ws[a] * g.g[(a, b)] + if a == b { 1.0 } else { 0.0 }))
    }

    fn eval_term(&self, i: usize, ws: &[f64], with_grad: bool) -> Result<TermEval> {
        match self.terms[i].as_ref() {
            SampleTerm::Dense(g) => Ok(dense_eval(g, ws, with_grad)),
            SampleTerm::LowRank(l) => low_rank_eval(l, ws, with_grad),
        }
    }

    /// `tr K(xi_i, w)`.
    pub fn trace_update(&self, i: usize, w: &[f64]) -> Result<f64> {
        self.check_design(w)?;
        let ws = self.expanded_weights(w);
        match self.terms[i].as_ref() {
            SampleTerm::Dense(g) => Ok(dense_trace(g, &ws)),
            SampleTerm::LowRank(l) => Ok(low_rank_eval(l, &ws, false)?.trace),
        }
    }

    /// Per-sample trace updates.
    pub fn trace_updates(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check_design(w)?;
        (0..self.n_samples()).into_par_iter().map(|i| self.trace_update(i, w)).collect()
    }

    pub fn phi_n(&self, w: &[f64]) -> Result<f64> {
        let t = self.trace_updates(w)?;
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        Ok(-t.iter().sum::<f64>() / self.n_samples() as f64)
    }

    pub fn grad_phi_n(&self, w: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_grad(w)?.1)
    }

    /// `(phi_N(w), grad phi_N(w))` sharing one factorization per sample.
    pub fn value_and_grad(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_design(w)?;
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let ws = self.expanded_weights(w);
        let evals = (0..self.n_samples())
            .into_par_iter()
            .map(|i| self.eval_term(i, &ws, true))
            .collect::<Result<Vec<_>>>()?;
        let scale = 1.0 / self.n_samples() as f64;
        let inv = 1.0 / (self.sigma * self.sigma);
        let mut value = 0.0;
        let mut grad = vec![0.0; self.s];
        for e in &evals {
            value -= scale * e.trace;
            for (idx, g) in e.grad_expanded.iter().enumerate() {
                grad[idx % self.s] -= scale * inv * g;
            }
        }
        Ok((value, grad))
    }
}

//! Continuation in the smoothing parameter: an `l1`-penalized solve followed
//! by warm-started solves with ever sharper `l0` surrogates.

use serde::{Deserialize, Serialize};

use crate::error::{OedError, Result};
use crate::sparsify::lbfgs::{minimize_box, BoxObjective, LbfgsOptions};
use crate::sparsify::penalty::{penalty, PenaltyConfig};

/// `phi(w) + gamma * psi_stage(w)`.
struct Penalized<'a, O: ?Sized> {
    phi: &'a O,
    cfg: &'a PenaltyConfig,
    stage: usize,
}

impl<O: BoxObjective + ?Sized> BoxObjective for Penalized<'_, O> {
    fn dim(&self) -> usize {
        self.phi.dim()
    }
    fn value_grad(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (f, mut g) = self.phi.value_grad(w)?;
        if self.cfg.gamma == 0.0 {
            return Ok((f, g));
        }
        let (p, pg) = penalty(w, self.cfg, self.stage);
        for (gi, pi) in g.iter_mut().zip(&pg) {
            *gi += self.cfg.gamma * pi;
        }
        Ok((f + self.cfg.gamma * p, g))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationOptions {
    pub penalty: PenaltyConfig,
    pub inner: LbfgsOptions,
    /// Restart every stage from `w0` instead of the previous stage's result.
    pub cold_start: bool,
    /// Initial design; all ones when absent.
    pub w0: Option<Vec<f64>>,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self { penalty: PenaltyConfig::default(), inner: LbfgsOptions::default(), cold_start: false, w0: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    /// Smoothing parameter; `None` for the `l1` stage.
    pub eps: Option<f64>,
    pub objective: f64,
    pub penalty: f64,
    pub nnz: usize,
    pub pg_norm: f64,
    pub iterations: usize,
    pub line_search_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationResult {
    /// Weights after the last stage, before rounding.
    pub relaxed: Vec<f64>,
    /// Weights rounded to `{0, 1}`.
    pub w: Vec<f64>,
    pub nnz: usize,
    /// Objective at the rounded design.
    pub objective: f64,
    /// Solution of the `l1` stage.
    pub l1_weights: Vec<f64>,
    /// Objective at the `l1` solution thresholded at 1/2.
    pub l1_rounded_objective: f64,
    pub stages: Vec<StageRecord>,
    /// Every weight came within `binary_tol` of 0 or 1.
    pub converged: bool,
}

pub fn is_binary(w: &[f64], tol: f64) -> bool {
    w.iter().all(|&v| v <= tol || v >= 1.0 - tol)
}

pub fn round_design(w: &[f64]) -> Vec<f64> {
    w.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect()
}

/// Runs stage 0 (`l1`) and stages `1..=max_stages` until all weights are
/// within `binary_tol` of `{0, 1}`; the result is then rounded.
pub fn continuation<O: BoxObjective + ?Sized>(phi: &O, opts: &ContinuationOptions) -> Result<ContinuationResult> {
    let cfg = &opts.penalty;
    cfg.validate()?;
    let s = phi.dim();
    let w0 = match &opts.w0 {
        Some(w) => {
            OedError::check_dim("initial design", s, w.len())?;
            w.clone()
        }
        None => vec![1.0; s],
    };
    let tol = cfg.binary_tol;
    let mut stages = Vec::new();
    let mut w = w0.clone();
    let mut l1_weights = Vec::new();
    let mut converged = false;
    for stage in 0..=cfg.max_stages {
        let start = if opts.cold_start { &w0 } else { &w };
        let res = minimize_box(&Penalized { phi, cfg, stage }, start, &opts.inner)?;
        if res.line_search_failed {
            log::debug!("stage {stage}: line search failed at projected-gradient norm {:.3e}", res.pg_norm);
        }
        w = res.x;
        let (objective, _) = phi.value_grad(&w)?;
        let (pen, _) = penalty(&w, cfg, stage);
        stages.push(StageRecord {
            stage,
            eps: (stage > 0).then(|| cfg.eps(stage)),
            objective,
            penalty: pen,
            nnz: w.iter().filter(|&&v| v > tol).count(),
            pg_norm: res.pg_norm,
            iterations: res.iterations,
            line_search_failed: res.line_search_failed,
        });
        if stage == 0 {
            l1_weights = w.clone();
        } else if is_binary(&w, tol) {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("weights not binary after {} stages; rounding", cfg.max_stages);
    }
    let rounded = round_design(&w);
    let objective = phi.value_grad(&rounded)?.0;
    let l1_rounded_objective = phi.value_grad(&round_design(&l1_weights))?.0;
    Ok(ContinuationResult {
        nnz: rounded.iter().filter(|&&v| v == 1.0).count(),
        relaxed: w,
        w: rounded,
        objective,
        l1_weights,
        l1_rounded_objective,
        stages,
        converged,
    })
}

/// Choice of the `l1` scale `alpha` so that the `l1` solution's norm is
/// comparable to the final sensor count: after each run `alpha` is multiplied
/// by `(|w_l1|_1 + 1/2) / (nnz + 1/2)` (clamped to `[1/max_step, max_step]`)
/// until that ratio lies within `[1/ratio_tol, ratio_tol]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSearch {
    pub max_tries: usize,
    pub ratio_tol: f64,
    pub max_step: f64,
}

impl Default for AlphaSearch {
    fn default() -> Self {
        Self { max_tries: 3, ratio_tol: 1.5, max_step: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaTrial {
    pub alpha: f64,
    pub l1_norm: f64,
    pub nnz: usize,
    pub objective: f64,
    pub stages: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSearchResult {
    pub result: ContinuationResult,
    pub alpha: f64,
    pub trials: Vec<AlphaTrial>,
}

/// `ln((l1 + 1/2) / (nnz + 1/2))`.
pub fn l1_mismatch(l1_norm: f64, nnz: usize) -> f64 {
    ((l1_norm + 0.5) / (nnz as f64 + 0.5)).ln()
}

/// Continuation with the `alpha` search; keeps the run with the lowest
/// `phi(w) + gamma * nnz(w)` at its binary design.
pub fn continuation_alpha_search<O: BoxObjective + ?Sized>(
    phi: &O,
    opts: &ContinuationOptions,
    search: &AlphaSearch,
) -> Result<AlphaSearchResult> {
    if !(search.ratio_tol >= 1.0 && search.max_step > 1.0) {
        return Err(OedError::invalid("alpha search", "need ratio_tol >= 1 and max_step > 1"));
    }
    let gamma = opts.penalty.gamma;
    let mut alpha = opts.penalty.alpha;
    let mut trials = Vec::new();
    let mut best: Option<(f64, ContinuationResult, f64)> = None;
    for _ in 0..search.max_tries.max(1) {
        let mut o = opts.clone();
        o.penalty.alpha = alpha;
        let r = continuation(phi, &o)?;
        let l1_norm: f64 = r.l1_weights.iter().sum();
        let m = l1_mismatch(l1_norm, r.nnz);
        trials.push(AlphaTrial { alpha, l1_norm, nnz: r.nnz, objective: r.objective, stages: r.stages.len() });
        let pen = r.objective + gamma * r.nnz as f64;
        if best.as_ref().is_none_or(|(bp, _, _)| pen < *bp) {
            best = Some((pen, r, alpha));
        }
        if m.abs() <= search.ratio_tol.ln() {
            break;
        }
        alpha *= m.exp().clamp(1.0 / search.max_step, search.max_step);
    }
    let (_, result, alpha) = best.expect("at least one trial");
    Ok(AlphaSearchResult { result, alpha, trials })
}

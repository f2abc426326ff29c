//! Projected limited-memory BFGS on the unit box.
//!
//! Variables at a bound whose gradient points outward form the active set;
//! the quasi-Newton direction is computed from curvature pairs restricted to
//! the free variables, and steps are taken along the projected path with an
//! Armijo rule, backtracking by safeguarded quadratic interpolation.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::dot;

/// A smooth function on `[0, 1]^dim`.
pub trait BoxObjective: Sync {
    fn dim(&self) -> usize;
    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Adapter turning a closure into a [`BoxObjective`].
pub struct FnObjective<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Sync> BoxObjective for FnObjective<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbfgsOptions {
    pub memory: usize,
    /// Stop when `||P(x - g) - x||_inf` falls to this level.
    pub pg_tol: f64,
    pub max_iter: usize,
    /// Also stop after `stall_iters` consecutive steps whose relative
    /// decrease `(f_k - f_k+1) / max(|f_k|, 1)` is at most `f_rel_tol`.
    /// Zero disables the test.
    pub f_rel_tol: f64,
    pub stall_iters: usize,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { memory: 10, pg_tol: 1e-6, max_iter: 500, f_rel_tol: 1e-9, stall_iters: 3, armijo: 1e-4, max_backtracks: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub pg_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Stopped by the relative-decrease test.
    pub stalled: bool,
    pub line_search_failed: bool,
    /// Objective after each accepted step, starting with the initial point.
    pub history: Vec<f64>,
}

pub fn project(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(0.0, 1.0);
    }
}

pub fn projected_gradient_norm(x: &[f64], g: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .map(|(&xi, &gi)| ((xi - gi).clamp(0.0, 1.0) - xi).abs())
        .fold(0.0, f64::max)
}

fn two_loop(g: &[f64], free: &[bool], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let fdot = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).zip(free).filter(|(_, &f)| f).map(|((x, y), _)| x * y).sum()
    };
    let mut q: Vec<f64> = g.iter().zip(free).map(|(&v, &f)| if f { v } else { 0.0 }).collect();
    let mut alphas = Vec::with_capacity(pairs.len());
    let mut scale = 1.0;
    let mut usable = Vec::with_capacity(pairs.len());
    for (s, y, _) in pairs.iter() {
        let sy = fdot(s, y);
        if sy > 1e-16 * fdot(s, s).sqrt() * fdot(y, y).sqrt() && sy > 0.0 {
            usable.push((s, y, 1.0 / sy));
        }
    }
    for &(s, y, rho) in usable.iter().rev() {
        let a = rho * fdot(s, &q);
        for ((qi, yi), &f) in q.iter_mut().zip(y.iter()).zip(free) {
            if f {
                *qi -= a * yi;
            }
        }
        alphas.push(a);
    }
    if let Some(&(s, y, _)) = usable.last() {
        scale = fdot(s, y) / fdot(y, y);
    }
    for qi in q.iter_mut() {
        *qi *= scale;
    }
    for (&(s, y, rho), a) in usable.iter().zip(alphas.iter().rev()) {
        let b = rho * fdot(y, &q);
        for ((qi, si), &f) in q.iter_mut().zip(s.iter()).zip(free) {
            if f {
                *qi += (a - b) * si;
            }
        }
    }
    q.iter().map(|v| -v).collect()
}

/// Minimizes `obj` over `[0, 1]^dim` from `x0` (projected first).
pub fn minimize_box<O: BoxObjective + ?Sized>(obj: &O, x0: &[f64], opts: &LbfgsOptions) -> Result<LbfgsResult> {
    let n = obj.dim();
    let mut x = x0.to_vec();
    project(&mut x);
    let (mut f, mut g) = obj.value_grad(&x)?;
    let mut history = vec![f];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut line_search_failed = false;
    let mut iterations = 0;
    let mut stall = 0;
    let mut stalled = false;
    let mut pg = projected_gradient_norm(&x, &g);
    while pg > opts.pg_tol && iterations < opts.max_iter {
        iterations += 1;
        let band = pg.min(1e-3);
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= band && g[i] > 0.0) || (x[i] >= 1.0 - band && g[i] < 0.0)))
            .collect();
        let mut d = two_loop(&g, &free, &pairs);
        for i in 0..n {
            if !free[i] {
                d[i] = -g[i];
            }
        }
        let free_slope: f64 = (0..n).filter(|&i| free[i]).map(|i| g[i] * d[i]).sum();
        if !(free_slope < 0.0) || d.iter().any(|v| !v.is_finite()) {
            d = g.iter().map(|v| -v).collect();
            pairs.clear();
        }
        let mut t = if pairs.is_empty() {
            let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if gmax > 0.0 { (1.0 / gmax).min(1.0) } else { 1.0 }
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let mut xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            project(&mut xt);
            let step: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &step);
            if decrease >= 0.0 && step.iter().all(|&v| v == 0.0) {
                break;
            }
            let (ft, gt) = obj.value_grad(&xt)?;
            if ft.is_finite() && ft <= f + opts.armijo * decrease.min(0.0) && decrease < 0.0 {
                accepted = Some((xt, ft, gt, step));
                break;
            }
            // Minimizer of the quadratic through f, the slope along the step
            // and f(t), kept within [t/1000, t/2].
            let curv = ft - f - decrease;
            let shrink = if ft.is_finite() && curv > 0.0 && decrease < 0.0 { -decrease / (2.0 * curv) } else { 0.5 };
            t *= shrink.clamp(1e-3, 0.5);
        }
        let Some((xn, fnew, gnew, s)) = accepted else {
            line_search_failed = true;
            break;
        };
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            pairs.push_back((s, y, sy));
            if pairs.len() > opts.memory {
                pairs.pop_front();
            }
        }
        if f - fnew <= opts.f_rel_tol * f.abs().max(1.0) {
            stall += 1;
        } else {
            stall = 0;
        }
        x = xn;
        f = fnew;
        g = gnew;
        history.push(f);
        pg = projected_gradient_norm(&x, &g);
        if opts.f_rel_tol > 0.0 && stall >= opts.stall_iters {
            stalled = true;
            break;
        }
    }
    Ok(LbfgsResult { converged: pg <= opts.pg_tol, stalled, x, f, pg_norm: pg, iterations, line_search_failed, history })
}

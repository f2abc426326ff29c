//! Smoothed `l0` penalty `f_eps(alpha w)` and its sum over sensors.

use serde::{Deserialize, Serialize};

use crate::error::{OedError, Result};

/// Cubic `1 + (4/27)(y - 2)^3` in `y = alpha w / eps`; it meets the linear
/// branch `y` at `y = 1/2` with value 1/2 and slope 1, and the constant
/// branch at `y = 2` with value 1 and slope 0.
const CUBIC: f64 = 4.0 / 27.0;

/// `(f_eps(alpha w), d/dw f_eps(alpha w))`.
pub fn f_eps(w: f64, eps: f64, alpha: f64) -> (f64, f64) {
    let y = alpha * w / eps;
    if y < 0.5 {
        (y, alpha / eps)
    } else if y < 2.0 {
        let t = y - 2.0;
        (1.0 + CUBIC * t * t * t, alpha / eps * 3.0 * CUBIC * t * t)
    } else {
        (1.0, 0.0)
    }
}

/// Coefficients `c0..c3` of the middle branch as a polynomial in `x = alpha w`.
pub fn cubic_coefficients(eps: f64) -> [f64; 4] {
    [1.0 - 8.0 * CUBIC, 12.0 * CUBIC / eps, -6.0 * CUBIC / (eps * eps), CUBIC / (eps * eps * eps)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub gamma: f64,
    pub alpha: f64,
    /// `eps(i) = eps_ratio^i` for stage `i >= 1`.
    pub eps_ratio: f64,
    pub binary_tol: f64,
    pub max_stages: usize,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self { gamma: 0.0, alpha: 0.1, eps_ratio: 2.0 / 3.0, binary_tol: 1e-3, max_stages: 40 }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(OedError::invalid("gamma", format!("must be finite and nonnegative, got {}", self.gamma)));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(OedError::invalid("alpha", format!("must be positive, got {}", self.alpha)));
        }
        if !(self.eps_ratio > 0.0 && self.eps_ratio < 1.0) {
            return Err(OedError::invalid("eps_ratio", format!("must lie in (0, 1), got {}", self.eps_ratio)));
        }
        if !(self.binary_tol > 0.0 && self.binary_tol < 0.5) {
            return Err(OedError::invalid("binary_tol", format!("must lie in (0, 0.5), got {}", self.binary_tol)));
        }
        Ok(())
    }

    pub fn eps(&self, stage: usize) -> f64 {
        self.eps_ratio.powi(stage as i32)
    }
}

/// `(psi, grad psi)`: `alpha * sum w` at stage 0, `sum f_eps(alpha w)` with
/// `eps = eps(stage)` afterwards.
pub fn penalty(w: &[f64], cfg: &PenaltyConfig, stage: usize) -> (f64, Vec<f64>) {
    if stage == 0 {
        return (cfg.alpha * w.iter().sum::<f64>(), vec![cfg.alpha; w.len()]);
    }
    let eps = cfg.eps(stage);
    let mut value = 0.0;
    let grad = w
        .iter()
        .map(|&wi| {
            let (v, d) = f_eps(wi, eps, cfg.alpha);
            value += v;
            d
        })
        .collect();
    (value, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branches() {
        let (eps, alpha) = (0.2, 0.1);
        assert_eq!(f_eps(0.0, eps, alpha), (0.0, alpha / eps));
        assert_eq!(f_eps(2.0 * eps / alpha, eps, alpha), (1.0, 0.0));
        let (v, d) = f_eps(0.5 * eps / alpha, eps, alpha);
        assert!((v - 0.5).abs() < 1e-15 && (d - alpha / eps).abs() < 1e-14);
    }

    #[test]
    fn coefficients_match_branch() {
        let eps = 0.37;
        let c = cubic_coefficients(eps);
        for &x in &[0.2, 0.4, 0.6] {
            let poly = c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x;
            assert!((poly - f_eps(x, eps, 1.0).0).abs() < 1e-13);
        }
    }

    #[test]
    fn stage_zero_is_l1() {
        let cfg = PenaltyConfig { alpha: 0.1, ..Default::default() };
        let (v, g) = penalty(&[1.0; 7], &cfg, 0);
        assert!((v - 0.7).abs() < 1e-15);
        assert_eq!(g, vec![0.1; 7]);
    }
}

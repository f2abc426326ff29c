//! Sparse binary designs by penalized continuation.

pub mod continuation;
pub mod lbfgs;
pub mod penalty;

pub use continuation::{
    continuation, continuation_alpha_search, is_binary, l1_mismatch, round_design, AlphaSearch, AlphaSearchResult, AlphaTrial,
    ContinuationOptions, ContinuationResult, StageRecord,
};
pub use lbfgs::{minimize_box, project, projected_gradient_norm, BoxObjective, FnObjective, LbfgsOptions, LbfgsResult};
pub use penalty::{cubic_coefficients, f_eps, penalty, PenaltyConfig};

use crate::error::Result;
use crate::objective::SaaProblem;

impl BoxObjective for SaaProblem {
    fn dim(&self) -> usize {
        self.s()
    }
    fn value_grad(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.value_and_grad(w)
    }
}

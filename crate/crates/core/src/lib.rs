//! A-optimal sensor placement for linear Bayesian inverse problems whose
//! forward model carries irreducible uncertainty.

pub mod counters;
pub mod darcy;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod objective;
pub mod posterior;
pub mod prior;
pub mod reduction;
pub mod seed;
pub mod sparsify;
pub mod transport;

pub use error::{OedError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

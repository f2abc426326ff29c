use thiserror::Error;

#[derive(Debug, Error)]
pub enum OedError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("point ({x}, {y}) lies outside the domain [0, {a}] x [0, {b}]")]
    OutOfDomain { x: f64, y: f64, a: f64, b: f64 },

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error("{what} has size {size}, above the limit of {limit}")]
    SizeGuard {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T, E = OedError> = std::result::Result<T, E>;

impl OedError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        OedError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(OedError::DimensionMismatch {
                context,
                expected,
                found,
            })
        }
    }
}

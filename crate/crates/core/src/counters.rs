//! Shared counter of linear-system solves against PDE operators.
//!
//! Each right-hand side counts once. Counters are per pipeline rather than
//! global so independent pipelines (and parallel tests) do not interfere.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

#[derive(Debug, Clone, Default)]
pub struct SolveCounter(Arc<AtomicU64>);

impl SolveCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, n: usize) {
        self.0.fetch_add(n as u64, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

//! Uniform node grid on a rectangle and nodal fields.

use serde::{Deserialize, Serialize};

use crate::error::{OedError, Result};

/// Node grid on `[0, a] x [0, b]`. Node `(i, j)` has index `j * nx + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub a: f64,
    pub b: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, a: f64, b: f64) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(OedError::invalid("grid", format!("need at least 3x3 nodes, got {nx}x{ny}")));
        }
        if !(a.is_finite() && a > 0.0 && b.is_finite() && b > 0.0) {
            return Err(OedError::invalid("grid", format!("extents must be positive, got {a} x {b}")));
        }
        Ok(Self { nx, ny, a, b })
    }

    pub fn hx(&self) -> f64 {
        self.a / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        self.b / (self.ny - 1) as f64
    }

    pub fn n(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, k: usize) -> (f64, f64) {
        let (i, j) = (k % self.nx, k / self.nx);
        (i as f64 * self.hx(), j as f64 * self.hy())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.a).contains(&x) && (0.0..=self.b).contains(&y)
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    /// Field whose value at each node is `f(x, y)`.
    pub fn field_from_fn(&self, f: impl Fn(f64, f64) -> f64) -> Field {
        Field::new((0..self.n()).map(|k| {
            let (x, y) = self.coords(k);
            f(x, y)
        }).collect())
    }

    /// Bilinear interpolation weights of the cell containing `(x, y)`.
    ///
    /// Entries with zero weight are dropped, so a point on a node yields a
    /// single weight of one.
    pub fn interp_weights(&self, x: f64, y: f64) -> Result<Vec<(usize, f64)>> {
        if !(x.is_finite() && y.is_finite()) || !self.contains(x, y) {
            return Err(OedError::OutOfDomain { x, y, a: self.a, b: self.b });
        }
        let (fx, fy) = (x / self.hx(), y / self.hy());
        let i0 = (fx.floor() as usize).min(self.nx - 2);
        let j0 = (fy.floor() as usize).min(self.ny - 2);
        let tx = (fx - i0 as f64).clamp(0.0, 1.0);
        let ty = (fy - j0 as f64).clamp(0.0, 1.0);
        let corners = [
            (self.index(i0, j0), (1.0 - tx) * (1.0 - ty)),
            (self.index(i0 + 1, j0), tx * (1.0 - ty)),
            (self.index(i0, j0 + 1), (1.0 - tx) * ty),
            (self.index(i0 + 1, j0 + 1), tx * ty),
        ];
        Ok(corners.into_iter().filter(|&(_, w)| w != 0.0).collect())
    }
}

/// Nodal coefficients on a [`Grid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self { values: vec![c; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_grid(&self, grid: &Grid, context: &'static str) -> Result<()> {
        OedError::check_dim(context, grid.n(), self.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_and_indexing() {
        let g = Grid::new(49, 33, 1.5, 1.0).unwrap();
        assert!((g.hx() - 1.5 / 48.0).abs() < 1e-15);
        assert!((g.hy() - 1.0 / 32.0).abs() < 1e-15);
        assert_eq!(g.n(), 49 * 33);
        assert_eq!(g.coords(g.index(48, 32)), (1.5, 1.0));
        assert!(Grid::new(2, 5, 1.0, 1.0).is_err());
    }

    #[test]
    fn node_and_center_weights() {
        let g = Grid::new(5, 4, 2.0, 1.5).unwrap();
        let (x, y) = g.coords(g.index(2, 1));
        assert_eq!(g.interp_weights(x, y).unwrap(), vec![(g.index(2, 1), 1.0)]);
        let w = g.interp_weights(0.5 * g.hx() + g.hx(), 0.5 * g.hy()).unwrap();
        assert_eq!(w.len(), 4);
        for (_, v) in w {
            assert!((v - 0.25).abs() < 1e-15);
        }
        assert_eq!(g.interp_weights(2.0, 1.5).unwrap(), vec![(g.n() - 1, 1.0)]);
        assert!(matches!(g.interp_weights(2.1, 0.0), Err(OedError::OutOfDomain { .. })));
    }
}

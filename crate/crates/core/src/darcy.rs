//! Velocity-field realizations from Darcy flow through a random
//! log-permeability field, plus the random initial time.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OedError, Result};
use crate::grid::{Field, Grid};
use crate::linalg::TripletBuilder;
use crate::prior::PriorModel;
use crate::seed;

/// One realization of the model uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainSample {
    pub theta: Field,
    pub pressure: Field,
    pub vx: Field,
    pub vy: Field,
    pub t0: f64,
    pub seed: u64,
}

/// Pressure with `p = 0` on the left edge, `p = 1` on the right edge and no
/// flux through top and bottom.
#[derive(Debug, Clone)]
pub struct PressureProblem<'a> {
    pub grid: &'a Grid,
    pub theta: &'a Field,
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

fn half_if_edge(k: usize, n: usize) -> f64 {
    if k == 0 || k == n - 1 {
        0.5
    } else {
        1.0
    }
}

/// Face conductances `(east, north)` per node; east of the last column and
/// north of the last row are zero.
fn conductances(grid: &Grid, theta: &Field) -> (Vec<f64>, Vec<f64>) {
    let (nx, ny) = (grid.nx, grid.ny);
    let (hx, hy) = (grid.hx(), grid.hy());
    let k: Vec<f64> = theta.values.iter().map(|t| t.exp()).collect();
    let mut east = vec![0.0; grid.n()];
    let mut north = vec![0.0; grid.n()];
    for j in 0..ny {
        for i in 0..nx {
            let p = grid.index(i, j);
            if i + 1 < nx {
                east[p] = harmonic(k[p], k[p + 1]) * half_if_edge(j, ny) * hy / hx;
            }
            if j + 1 < ny {
                north[p] = harmonic(k[p], k[p + nx]) * half_if_edge(i, nx) * hx / hy;
            }
        }
    }
    (east, north)
}

impl PressureProblem<'_> {
    fn check(&self) -> Result<()> {
        self.theta.check_grid(self.grid, "log-permeability")?;
        if self.theta.values.iter().any(|t| !t.is_finite()) {
            return Err(OedError::invalid("theta", "log-permeability must be finite"));
        }
        Ok(())
    }

    pub fn solve(&self) -> Result<Field> {
        self.check()?;
        let grid = self.grid;
        let (nx, ny) = (grid.nx, grid.ny);
        let (east, north) = conductances(grid, self.theta);
        let m = nx - 2;
        let unknown = |i: usize, j: usize| j * m + (i - 1);
        let mut b = TripletBuilder::new(m * ny, m * ny);
        let mut rhs = Mat::<f64>::zeros(m * ny, 1);
        for j in 0..ny {
            for i in 1..nx - 1 {
                let r = unknown(i, j);
                let p = grid.index(i, j);
                let mut diag = 0.0;
                let mut link = |q_i: usize, q_j: usize, c: f64, b: &mut TripletBuilder| {
                    diag += c;
                    if q_i == 0 {
                    } else if q_i == nx - 1 {
                        rhs[(r, 0)] += c;
                    } else {
                        b.add(r, unknown(q_i, q_j), -c);
                    }
                };
                link(i + 1, j, east[p], &mut b);
                link(i - 1, j, east[p - 1], &mut b);
                if j + 1 < ny {
                    link(i, j + 1, north[p], &mut b);
                }
                if j > 0 {
                    link(i, j - 1, north[p - nx], &mut b);
                }
                b.add(r, r, diag);
            }
        }
        let a = b.build()?;
        let llt = a
            .csc()
            .sp_cholesky(Side::Lower)
            .map_err(|e| OedError::Solver(format!("pressure Cholesky failed: {e:?}")))?;
        llt.solve_in_place(rhs.as_mut());
        let mut p = vec![0.0; grid.n()];
        for j in 0..ny {
            p[grid.index(nx - 1, j)] = 1.0;
            for i in 1..nx - 1 {
                p[grid.index(i, j)] = rhs[(unknown(i, j), 0)];
            }
        }
        Ok(Field::new(p))
    }

    /// Largest net flux imbalance over the interior (non-Dirichlet) nodes.
    pub fn residual(&self, p: &Field) -> Result<f64> {
        self.check()?;
        p.check_grid(self.grid, "pressure")?;
        let grid = self.grid;
        let (nx, ny) = (grid.nx, grid.ny);
        let (east, north) = conductances(grid, self.theta);
        let v = &p.values;
        let mut worst = 0.0f64;
        for j in 0..ny {
            for i in 1..nx - 1 {
                let q = grid.index(i, j);
                let mut r = east[q] * (v[q + 1] - v[q]) + east[q - 1] * (v[q - 1] - v[q]);
                if j + 1 < ny {
                    r += north[q] * (v[q + nx] - v[q]);
                }
                if j > 0 {
                    r += north[q - nx] * (v[q - nx] - v[q]);
                }
                worst = worst.max(r.abs());
            }
        }
        Ok(worst)
    }
}

pub fn solve_pressure(grid: &Grid, theta: &Field) -> Result<Field> {
    PressureProblem { grid, theta }.solve()
}

/// Nodal Darcy velocity `-exp(theta) grad p`: centred differences inside,
/// one-sided on the left and right edges, zero normal component on the
/// no-flux edges.
pub fn velocity_from_pressure(grid: &Grid, theta: &Field, p: &Field) -> Result<(Field, Field)> {
    theta.check_grid(grid, "log-permeability")?;
    p.check_grid(grid, "pressure")?;
    let (nx, ny) = (grid.nx, grid.ny);
    let (hx, hy) = (grid.hx(), grid.hy());
    let pv = &p.values;
    let mut vx = vec![0.0; grid.n()];
    let mut vy = vec![0.0; grid.n()];
    for j in 0..ny {
        for i in 0..nx {
            let q = grid.index(i, j);
            let k = theta.values[q].exp();
            let dpdx = if i == 0 {
                (pv[q + 1] - pv[q]) / hx
            } else if i == nx - 1 {
                (pv[q] - pv[q - 1]) / hx
            } else {
                (pv[q + 1] - pv[q - 1]) / (2.0 * hx)
            };
            let dpdy = if j == 0 || j == ny - 1 {
                0.0
            } else {
                (pv[q + nx] - pv[q - nx]) / (2.0 * hy)
            };
            vx[q] = -k * dpdx;
            vy[q] = -k * dpdy;
        }
    }
    Ok((Field::new(vx), Field::new(vy)))
}

/// Draws `theta` from `prior_theta`, solves for the velocity and draws the
/// initial time uniformly from `t0_range`.
pub fn draw_sample(prior_theta: &PriorModel, t0_range: (f64, f64), seed: u64) -> Result<UncertainSample> {
    let (lo, hi) = t0_range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(OedError::invalid("t0_range", format!("empty or non-finite range ({lo}, {hi})")));
    }
    let grid = prior_theta.grid();
    let theta = prior_theta.sample_field(seed::derive_tagged(seed, "theta", 0));
    let t0 = if lo == hi {
        lo
    } else {
        seed::rng(seed::derive_tagged(seed, "t0", 0)).random_range(lo..hi)
    };
    let pressure = solve_pressure(grid, &theta)?;
    let (vx, vy) = velocity_from_pressure(grid, &theta, &pressure)?;
    Ok(UncertainSample { theta, pressure, vx, vy, t0, seed })
}

impl UncertainSample {
    /// Sample with a prescribed velocity field (no flow solve).
    pub fn with_velocity(grid: &Grid, vx: Field, vy: Field, t0: f64) -> Result<Self> {
        vx.check_grid(grid, "vx")?;
        vy.check_grid(grid, "vy")?;
        Ok(Self {
            theta: Field::zeros(grid.n()),
            pressure: Field::zeros(grid.n()),
            vx,
            vy,
            t0,
            seed: 0,
        })
    }
}

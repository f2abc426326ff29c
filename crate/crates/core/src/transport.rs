//! Implicit-Euler upwind advection-diffusion from `T0` to `T1`, observed
//! through time-averaged point sensors, with its exact discrete transpose.
//!
//! Each node is a unit control volume. Diffusion couples grid neighbours with
//! rates `kappa/hx^2` and `kappa/hy^2`; advection exchanges mass across each
//! face at the upwind value with the face velocity averaged from the two
//! nodes. The left edge is closed (no flux of either kind); on the other edges
//! the outgoing advective flux leaves the domain and incoming flow carries
//! clean water. The step matrix `I + dt L` is then a column diagonally
//! dominant M-matrix, so the scheme preserves nonnegativity and, with zero
//! velocity, total mass.

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::counters::SolveCounter;
use crate::darcy::UncertainSample;
use crate::error::{OedError, Result};
use crate::grid::{Field, Grid};
use crate::linalg::{LinearMap, SparseMatrix, TripletBuilder};
use crate::prior::PriorModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportConfig {
    pub kappa: f64,
    pub t1: f64,
    pub n_steps: usize,
    pub obs_times: Vec<f64>,
    pub obs_halfwidth: f64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            kappa: 1e-3,
            t1: 16.0,
            n_steps: 120,
            obs_times: vec![7.0, 9.0, 11.0, 13.0, 15.0],
            obs_halfwidth: 0.5,
        }
    }
}

impl TransportConfig {
    pub fn validate(&self, t0: f64) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(OedError::invalid("kappa", format!("must be positive, got {}", self.kappa)));
        }
        if self.n_steps < 10 {
            return Err(OedError::invalid("n_steps", format!("need at least 10, got {}", self.n_steps)));
        }
        if self.obs_times.is_empty() {
            return Err(OedError::Empty("obs_times"));
        }
        if !(self.obs_halfwidth.is_finite() && self.obs_halfwidth > 0.0) {
            return Err(OedError::invalid("obs_halfwidth", "must be positive"));
        }
        if self.obs_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(OedError::invalid("obs_times", "must be strictly increasing"));
        }
        let h = self.obs_halfwidth;
        let first = self.obs_times[0] - h;
        let last = self.obs_times[self.obs_times.len() - 1] + h;
        if !(t0.is_finite() && t0 < first) {
            return Err(OedError::invalid("t0", format!("initial time {t0} must precede the first window start {first}")));
        }
        if last > self.t1 {
            return Err(OedError::invalid("obs_times", format!("last window ends at {last}, after t1 = {}", self.t1)));
        }
        Ok(())
    }

    pub fn n_obs(&self) -> usize {
        self.obs_times.len()
    }
}

/// Candidate sensor locations and their bilinear interpolation rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorNetwork {
    pub locations: Vec<(f64, f64)>,
    pub interp: Vec<Vec<(usize, f64)>>,
}

impl SensorNetwork {
    pub fn new(grid: &Grid, locations: Vec<(f64, f64)>) -> Result<Self> {
        if locations.is_empty() {
            return Err(OedError::Empty("sensor locations"));
        }
        let mut interp = Vec::with_capacity(locations.len());
        for &(x, y) in &locations {
            if !(x > 0.0 && x < grid.a && y > 0.0 && y < grid.b) {
                return Err(OedError::OutOfDomain { x, y, a: grid.a, b: grid.b });
            }
            interp.push(grid.interp_weights(x, y)?);
        }
        Ok(Self { locations, interp })
    }

    /// Regular `count_x x count_y` lattice inset by `margin` (fraction of
    /// each extent) from the boundary; sensor index runs fastest in x.
    pub fn lattice(grid: &Grid, count_x: usize, count_y: usize, margin: f64) -> Result<Self> {
        if count_x == 0 || count_y == 0 {
            return Err(OedError::Empty("sensor lattice"));
        }
        if !(margin > 0.0 && margin < 0.5) {
            return Err(OedError::invalid("margin", format!("must lie in (0, 0.5), got {margin}")));
        }
        let axis = |count: usize, len: f64| -> Vec<f64> {
            if count == 1 {
                return vec![0.5 * len];
            }
            let (lo, hi) = (margin * len, (1.0 - margin) * len);
            (0..count).map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64).collect()
        };
        let xs = axis(count_x, grid.a);
        let ys = axis(count_y, grid.b);
        let locations = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
        Self::new(grid, locations)
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }
}

/// Step matrix `I + dt L` for the given velocity.
pub fn step_matrix(grid: &Grid, vx: &Field, vy: &Field, kappa: f64, dt: f64) -> Result<SparseMatrix> {
    vx.check_grid(grid, "vx")?;
    vy.check_grid(grid, "vy")?;
    let (nx, ny) = (grid.nx, grid.ny);
    let (hx, hy) = (grid.hx(), grid.hy());
    let (vx, vy) = (&vx.values, &vy.values);
    let mut b = TripletBuilder::new(grid.n(), grid.n());
    for p in 0..grid.n() {
        b.add(p, p, 1.0);
    }
    // Exchange between p and q with rate `out` for mass leaving p towards q
    // and `inn` for mass arriving from q.
    let mut face = |p: usize, q: usize, diff: f64, vel: f64, h: f64| {
        let fwd = diff + vel.max(0.0) / h;
        let back = diff + (-vel).max(0.0) / h;
        b.add(p, p, dt * fwd);
        b.add(q, p, -dt * fwd);
        b.add(q, q, dt * back);
        b.add(p, q, -dt * back);
    };
    for j in 0..ny {
        for i in 0..nx {
            let p = grid.index(i, j);
            if i + 1 < nx {
                face(p, p + 1, kappa / (hx * hx), 0.5 * (vx[p] + vx[p + 1]), hx);
            }
            if j + 1 < ny {
                face(p, p + nx, kappa / (hy * hy), 0.5 * (vy[p] + vy[p + nx]), hy);
            }
        }
    }
    for j in 0..ny {
        for i in 0..nx {
            let p = grid.index(i, j);
            let mut out = 0.0;
            if i == nx - 1 {
                out += vx[p].max(0.0) / hx;
            }
            if j == 0 {
                out += (-vy[p]).max(0.0) / hy;
            }
            if j == ny - 1 {
                out += vy[p].max(0.0) / hy;
            }
            if out > 0.0 {
                b.add(p, p, dt * out);
            }
        }
    }
    b.build()
}

/// Quadrature weights of the window average `(1/2h) int u dt` over the
/// time-step states, exact for the piecewise-linear interpolant in time.
/// Returns, per observation time, `(step, weight)` pairs in increasing step.
pub fn window_weights(t0: f64, dt: f64, n_steps: usize, centre: f64, halfwidth: f64) -> Vec<(usize, f64)> {
    let (lo, hi) = (centre - halfwidth, centre + halfwidth);
    let mut w = std::collections::BTreeMap::<usize, f64>::new();
    for k in 0..n_steps {
        let (ta, tb) = (t0 + k as f64 * dt, t0 + (k + 1) as f64 * dt);
        let (a, b) = (lo.max(ta), hi.min(tb));
        if b <= a {
            continue;
        }
        // Integrals of the two hat functions over [a, b] within [ta, tb].
        let (sa, sb) = ((a - ta) / dt, (b - ta) / dt);
        let right = 0.5 * (sb * sb - sa * sa) * dt;
        let left = (b - a) - right;
        *w.entry(k).or_insert(0.0) += left / (2.0 * halfwidth);
        *w.entry(k + 1).or_insert(0.0) += right / (2.0 * halfwidth);
    }
    w.into_iter().filter(|&(_, v)| v != 0.0).collect()
}

/// Linear map from an initial concentration to the stacked window-averaged
/// sensor readings. Output index `j * s + l` is sensor `l` at time `j`.
pub struct ForwardOperator {
    grid: Grid,
    pub sample: Arc<UncertainSample>,
    pub config: TransportConfig,
    pub sensors: Arc<SensorNetwork>,
    dt: f64,
    step: SparseMatrix,
    lu: Lu<usize, f64>,
    /// Per step, the `(observation time, weight)` pairs it contributes to.
    step_weights: Vec<Vec<(usize, f64)>>,
    counter: SolveCounter,
}

impl std::fmt::Debug for ForwardOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForwardOperator")
            .field("n", &self.grid.n())
            .field("s", &self.sensors.len())
            .field("r", &self.config.n_obs())
            .field("t0", &self.sample.t0)
            .field("dt", &self.dt)
            .finish_non_exhaustive()
    }
}

impl ForwardOperator {
    pub fn new(
        grid: Grid,
        sample: Arc<UncertainSample>,
        config: TransportConfig,
        sensors: Arc<SensorNetwork>,
    ) -> Result<Self> {
        config.validate(sample.t0)?;
        for row in &sensors.interp {
            if row.iter().any(|&(k, _)| k >= grid.n()) {
                return Err(OedError::DimensionMismatch { context: "sensor interpolation", expected: grid.n(), found: row.len() });
            }
        }
        let dt = (config.t1 - sample.t0) / config.n_steps as f64;
        let step = step_matrix(&grid, &sample.vx, &sample.vy, config.kappa, dt)?;
        let lu = step
            .csc()
            .sp_lu()
            .map_err(|e| OedError::Solver(format!("step LU failed: {e:?}")))?;
        let mut step_weights = vec![Vec::new(); config.n_steps + 1];
        for (j, &tau) in config.obs_times.iter().enumerate() {
            for (k, w) in window_weights(sample.t0, dt, config.n_steps, tau, config.obs_halfwidth) {
                step_weights[k].push((j, w));
            }
        }
        let last = step_weights.iter().rposition(|w| !w.is_empty()).unwrap_or(0);
        step_weights.truncate(last + 1);
        Ok(Self { grid, sample, config, sensors, dt, step, lu, step_weights, counter: SolveCounter::new() })
    }

    pub fn with_counter(mut self, counter: SolveCounter) -> Self {
        self.counter = counter;
        self
    }

    pub fn counter(&self) -> &SolveCounter {
        &self.counter
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn s(&self) -> usize {
        self.sensors.len()
    }

    pub fn r(&self) -> usize {
        self.config.n_obs()
    }

    pub fn d(&self) -> usize {
        self.s() * self.r()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step_matrix(&self) -> &SparseMatrix {
        &self.step
    }

    /// Index of the last time step that any observation window touches.
    pub fn last_observed_step(&self) -> usize {
        self.step_weights.len() - 1
    }

    /// `(step, weight)` pairs of observation window `j`.
    pub fn window(&self, j: usize) -> Vec<(usize, f64)> {
        self.step_weights
            .iter()
            .enumerate()
            .flat_map(|(k, ws)| ws.iter().filter(move |&&(jj, _)| jj == j).map(move |&(_, w)| (k, w)))
            .collect()
    }

    fn observe_into(&self, u: MatRef<'_, f64>, weights: &[(usize, f64)], out: &mut Mat<f64>) {
        let s = self.s();
        for (l, row) in self.sensors.interp.iter().enumerate() {
            for c in 0..u.ncols() {
                let val: f64 = row.iter().map(|&(k, w)| w * u[(k, c)]).sum();
                for &(j, w) in weights {
                    out[(j * s + l, c)] += w * val;
                }
            }
        }
    }

    fn inject(&self, y: MatRef<'_, f64>, weights: &[(usize, f64)], lam: &mut Mat<f64>) {
        let s = self.s();
        for (l, row) in self.sensors.interp.iter().enumerate() {
            for c in 0..y.ncols() {
                let val: f64 = weights.iter().map(|&(j, w)| w * y[(j * s + l, c)]).sum();
                if val != 0.0 {
                    for &(k, w) in row {
                        lam[(k, c)] += w * val;
                    }
                }
            }
        }
    }

    /// Forward map on a block of initial conditions (`n x b` to `d x b`).
    pub fn apply_mat(&self, m: MatRef<'_, f64>) -> Result<Mat<f64>> {
        OedError::check_dim("forward apply", self.n(), m.nrows())?;
        let mut out = Mat::zeros(self.d(), m.ncols());
        let mut u = m.to_owned();
        for (k, weights) in self.step_weights.iter().enumerate() {
            if k > 0 {
                self.lu.solve_in_place(u.as_mut());
                self.counter.add(u.ncols());
            }
            if !weights.is_empty() {
                self.observe_into(u.as_ref(), weights, &mut out);
            }
        }
        Ok(out)
    }

    /// Transposed map (`d x b` to `n x b`): reverse sweep with transposed solves.
    pub fn apply_transpose_mat(&self, y: MatRef<'_, f64>) -> Result<Mat<f64>> {
        OedError::check_dim("forward transpose", self.d(), y.nrows())?;
        let mut lam = Mat::zeros(self.n(), y.ncols());
        for (k, weights) in self.step_weights.iter().enumerate().rev() {
            if !weights.is_empty() {
                self.inject(y, weights, &mut lam);
            }
            if k > 0 {
                self.lu.solve_transpose_in_place(lam.as_mut());
                self.counter.add(lam.ncols());
            }
        }
        Ok(lam)
    }

    pub fn apply(&self, m: &Field) -> Result<Vec<f64>> {
        m.check_grid(&self.grid, "forward input")?;
        let out = self.apply_mat(MatRef::from_column_major_slice(&m.values, m.len(), 1))?;
        Ok(out.col_as_slice(0).to_vec())
    }

    pub fn apply_transpose(&self, d: &[f64]) -> Result<Field> {
        let out = self.apply_transpose_mat(MatRef::from_column_major_slice(d, d.len(), 1))?;
        Ok(Field::new(out.col_as_slice(0).to_vec()))
    }

    /// States `u_0..u_K` of the time stepping for one initial condition.
    pub fn trajectory(&self, m: &Field) -> Result<Vec<Vec<f64>>> {
        m.check_grid(&self.grid, "forward input")?;
        let mut u = Mat::from_fn(self.n(), 1, |i, _| m.values[i]);
        let mut states = vec![m.values.clone()];
        for _ in 0..self.config.n_steps {
            self.lu.solve_in_place(u.as_mut());
            self.counter.add(1);
            states.push(u.col_as_slice(0).to_vec());
        }
        Ok(states)
    }

    /// Dense `d x n` matrix of the map (test oracle; `n <= 2500`).
    pub fn assemble_dense(&self) -> Result<Mat<f64>> {
        const LIMIT: usize = 2500;
        if self.n() > LIMIT {
            return Err(OedError::SizeGuard { what: "dense forward operator", size: self.n(), limit: LIMIT });
        }
        self.apply_mat(Mat::<f64>::identity(self.n(), self.n()).as_ref())
    }
}

impl LinearMap for ForwardOperator {
    fn nrows(&self) -> usize {
        self.d()
    }
    fn ncols(&self) -> usize {
        self.n()
    }
    fn apply(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        self.apply_mat(x).expect("block dimension checked by caller")
    }
    fn apply_transpose(&self, y: MatRef<'_, f64>) -> Mat<f64> {
        self.apply_transpose_mat(y).expect("block dimension checked by caller")
    }
}

/// Prior-preconditioned map `F Gamma^{1/2} = F A^-1`.
#[derive(Clone, Copy)]
pub struct Preconditioned<'a> {
    pub forward: &'a ForwardOperator,
    pub prior: &'a PriorModel,
}

impl LinearMap for Preconditioned<'_> {
    fn nrows(&self) -> usize {
        self.forward.d()
    }
    fn ncols(&self) -> usize {
        self.forward.n()
    }
    fn apply(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        let z = self.prior.apply_sqrt_cov_mat(x).expect("block dimension checked by caller");
        self.forward.apply_mat(z.as_ref()).expect("grids agree")
    }
    fn apply_transpose(&self, y: MatRef<'_, f64>) -> Mat<f64> {
        let z = self.forward.apply_transpose_mat(y).expect("block dimension checked by caller");
        self.prior.apply_sqrt_cov_mat(z.as_ref()).expect("grids agree")
    }
}

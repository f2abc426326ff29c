#![allow(dead_code)]

use std::sync::Arc;

use faer::{Mat, MatRef};
use nalgebra::DMatrix;
use oeduu::darcy::UncertainSample;
use oeduu::grid::{Field, Grid};
use oeduu::prior::PriorModel;
use oeduu::transport::{ForwardOperator, SensorNetwork, TransportConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn to_na(m: MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn from_na(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    oeduu::seed::rng(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
}

pub fn dense_operator(prior: &PriorModel) -> DMatrix<f64> {
    to_na(prior.operator().to_dense().as_ref())
}

/// Small transport problem with a smooth, roughly leftward velocity.
pub fn small_forward(nx: usize, ny: usize, t0: f64, sensors_xy: (usize, usize)) -> ForwardOperator {
    let grid = Grid::new(nx, ny, 1.5, 1.0).unwrap();
    let vx = grid.field_from_fn(|x, y| -0.06 * (1.0 + 0.3 * (3.0 * y).sin()) * (1.0 - 0.2 * x));
    let vy = grid.field_from_fn(|x, y| 0.02 * (2.0 * x).cos() * (std::f64::consts::PI * y).sin());
    let sample = UncertainSample::with_velocity(&grid, vx, vy, t0).unwrap();
    let sensors = SensorNetwork::lattice(&grid, sensors_xy.0, sensors_xy.1, 0.1).unwrap();
    let cfg = TransportConfig { n_steps: 40, ..Default::default() };
    ForwardOperator::new(grid, Arc::new(sample), cfg, Arc::new(sensors)).unwrap()
}

pub fn zero_mean_prior(grid: Grid) -> PriorModel {
    PriorModel::new(grid, 0.008, 0.02, Field::zeros(grid.n())).unwrap()
}

mod common;

use std::sync::Arc;

use common::*;
use faer::Mat;
use nalgebra::{DMatrix, DVector};
use oeduu::darcy::{draw_sample, UncertainSample};
use oeduu::grid::{Field, Grid};
use oeduu::prior::PriorModel;
use oeduu::transport::{step_matrix, ForwardOperator, SensorNetwork, TransportConfig};
use oeduu::OedError;

fn darcy_forward(grid: Grid, seed: u64, cfg: TransportConfig) -> ForwardOperator {
    let theta_prior = PriorModel::new(grid, 0.0025, 0.0625, Field::constant(grid.n(), -2.7)).unwrap();
    let sample = draw_sample(&theta_prior, (-1.0, 1.0), seed).unwrap();
    let sensors = SensorNetwork::lattice(&grid, 4, 3, 0.1).unwrap();
    ForwardOperator::new(grid, Arc::new(sample), cfg, Arc::new(sensors)).unwrap()
}

fn still_forward(grid: Grid, t0: f64, sensors: SensorNetwork, cfg: TransportConfig) -> ForwardOperator {
    let sample = UncertainSample::with_velocity(&grid, Field::zeros(grid.n()), Field::zeros(grid.n()), t0).unwrap();
    ForwardOperator::new(grid, Arc::new(sample), cfg, Arc::new(sensors)).unwrap()
}

fn cfg(n_steps: usize) -> TransportConfig {
    TransportConfig { n_steps, ..Default::default() }
}

#[test]
fn zero_input_zero_output() {
    let f = small_forward(11, 9, 0.3, (4, 3));
    assert!(f.apply(&Field::zeros(f.n())).unwrap().iter().all(|&v| v == 0.0));
    assert!(f.apply_transpose(&vec![0.0; f.d()]).unwrap().values.iter().all(|&v| v == 0.0));
    assert_eq!(f.d(), 12 * 5);
}

#[test]
fn constant_is_steady_without_flow() {
    let g = Grid::new(11, 9, 1.5, 1.0).unwrap();
    let f = still_forward(g, -0.4, SensorNetwork::lattice(&g, 5, 4, 0.1).unwrap(), cfg(60));
    let obs = f.apply(&Field::constant(g.n(), 2.5)).unwrap();
    assert!(obs.iter().all(|&o| (o - 2.5).abs() <= 1e-8));
}

#[test]
fn step_matrix_matches_independent_assembly() {
    let g = Grid::new(6, 5, 1.5, 1.0).unwrap();
    let (kappa, dt) = (2e-3, 0.2);
    let t = to_na(step_matrix(&g, &Field::zeros(g.n()), &Field::zeros(g.n()), kappa, dt).unwrap().to_dense().as_ref());
    let mut lap = DMatrix::<f64>::zeros(g.n(), g.n());
    for j in 0..g.ny {
        for i in 0..g.nx {
            let p = g.index(i, j);
            let mut link = |q: usize, h: f64| {
                lap[(p, p)] += kappa / (h * h);
                lap[(p, q)] -= kappa / (h * h);
            };
            if i > 0 { link(p - 1, g.hx()); }
            if i + 1 < g.nx { link(p + 1, g.hx()); }
            if j > 0 { link(p - g.nx, g.hy()); }
            if j + 1 < g.ny { link(p + g.nx, g.hy()); }
        }
    }
    let expect = DMatrix::<f64>::identity(g.n(), g.n()) + lap * dt;
    assert!((t - expect).abs().max() < 1e-14);

    // Uniform leftward flow: each node receives from its right neighbour and
    // the left column keeps what arrives.
    let v = 0.1;
    let t = to_na(step_matrix(&g, &Field::constant(g.n(), -v), &Field::zeros(g.n()), 1e-12, dt).unwrap().to_dense().as_ref());
    for j in 0..g.ny {
        for i in 0..g.nx {
            let p = g.index(i, j);
            let out = if i == 0 { 0.0 } else { dt * v / g.hx() };
            assert!((t[(p, p)] - 1.0 - out).abs() < 1e-9);
            if i + 1 < g.nx {
                assert!((t[(p, p + 1)] + dt * v / g.hx()).abs() < 1e-9);
            }
        }
    }
}

/// Time stepping with a dense inverse and window averages by fine quadrature
/// of the piecewise-linear-in-time state.
fn dense_oracle(f: &ForwardOperator, m: &[f64]) -> Vec<f64> {
    let n = f.n();
    let step = to_na(f.step_matrix().to_dense().as_ref()).try_inverse().unwrap();
    let mut states = vec![DVector::from_column_slice(m)];
    for _ in 0..f.config.n_steps {
        let next = &step * states.last().unwrap();
        states.push(next);
    }
    let (t0, dt, h) = (f.sample.t0, f.dt(), f.config.obs_halfwidth);
    let s = f.s();
    let mut out = vec![0.0; f.d()];
    let fine = 20_000;
    for (j, &tau) in f.config.obs_times.iter().enumerate() {
        let mut avg = DVector::<f64>::zeros(n);
        for q in 0..=fine {
            let t = tau - h + 2.0 * h * q as f64 / fine as f64;
            let x = (t - t0) / dt;
            let k = (x.floor() as usize).min(f.config.n_steps - 1);
            let th = x - k as f64;
            let u = &states[k] * (1.0 - th) + &states[k + 1] * th;
            let wq = if q == 0 || q == fine { 0.5 } else { 1.0 } / fine as f64;
            avg += u * wq;
        }
        for (l, row) in f.sensors.interp.iter().enumerate() {
            out[j * s + l] = row.iter().map(|&(k, w)| w * avg[k]).sum();
        }
    }
    out
}

#[test]
fn diffusing_bump_matches_dense_oracle() {
    let g = Grid::new(11, 11, 1.5, 1.0).unwrap();
    let centre = (0.75, 0.5);
    let sensors = SensorNetwork::new(&g, vec![centre, (0.45, 0.5), (0.75, 0.8), (1.2, 0.2)]).unwrap();
    let f = still_forward(g, 0.2, sensors, TransportConfig { kappa: 5e-4, n_steps: 60, ..Default::default() });
    let bump = g.field_from_fn(|x, y| (-((x - centre.0).powi(2) + (y - centre.1).powi(2)) / 0.02).exp());
    let obs = f.apply(&bump).unwrap();
    let oracle = dense_oracle(&f, &bump.values);
    assert!(rel_err(&obs, &oracle) <= 1e-6, "{}", rel_err(&obs, &oracle));
    let s = f.s();
    let at_centre: Vec<f64> = (0..f.r()).map(|j| obs[j * s]).collect();
    assert!(at_centre.windows(2).all(|w| w[1] < w[0]), "{at_centre:?}");
}

#[test]
fn flowing_plume_matches_dense_oracle() {
    let f = darcy_forward(Grid::new(11, 11, 1.5, 1.0).unwrap(), 5, cfg(50));
    let m = normal_vec(&mut rng(2), f.n());
    assert!(rel_err(&f.apply(&Field::new(m.clone())).unwrap(), &dense_oracle(&f, &m)) <= 1e-6);
}

#[test]
fn adjoint_identity_across_samples() {
    let g = Grid::new(13, 9, 1.5, 1.0).unwrap();
    let mut r = rng(11);
    for seed in 0..50 {
        let f = darcy_forward(g, seed, cfg(30));
        let m = normal_vec(&mut r, f.n());
        let d = normal_vec(&mut r, f.d());
        let fm = f.apply(&Field::new(m.clone())).unwrap();
        let ftd = f.apply_transpose(&d).unwrap();
        let lhs: f64 = fm.iter().zip(&d).map(|(a, b)| a * b).sum();
        let rhs: f64 = m.iter().zip(&ftd.values).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()), "seed {seed}: {lhs} vs {rhs}");
    }
}

#[test]
fn linearity() {
    let f = small_forward(13, 9, -0.2, (4, 3));
    let mut r = rng(5);
    let (m1, m2) = (normal_vec(&mut r, f.n()), normal_vec(&mut r, f.n()));
    let (a, b) = (0.7, -1.9);
    let combo = Field::new(m1.iter().zip(&m2).map(|(x, y)| a * x + b * y).collect());
    let lhs = f.apply(&combo).unwrap();
    let y1 = f.apply(&Field::new(m1)).unwrap();
    let y2 = f.apply(&Field::new(m2)).unwrap();
    let rhs: Vec<f64> = y1.iter().zip(&y2).map(|(x, y)| a * x + b * y).collect();
    let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(lhs.iter().zip(&rhs).all(|(x, y)| (x - y).abs() <= 1e-12 * scale));
}

#[test]
fn mass_conserved_without_flow() {
    let g = Grid::new(15, 11, 1.5, 1.0).unwrap();
    let f = still_forward(g, 0.0, SensorNetwork::lattice(&g, 3, 3, 0.2).unwrap(), cfg(80));
    let m = normal_vec(&mut rng(8), g.n()).iter().map(|v| v.abs()).collect();
    let traj = f.trajectory(&Field::new(m)).unwrap();
    let total0: f64 = traj[0].iter().sum();
    for u in &traj {
        let total: f64 = u.iter().sum();
        assert!((total - total0).abs() <= 1e-10 * total0.abs());
    }
}

#[test]
fn nonnegative_states() {
    let g = Grid::new(15, 11, 1.5, 1.0).unwrap();
    for seed in 0..5 {
        let f = darcy_forward(g, seed, cfg(40));
        let m: Vec<f64> = normal_vec(&mut rng(seed), g.n()).iter().map(|v| v.abs()).collect();
        let traj = f.trajectory(&Field::new(m)).unwrap();
        let min = traj.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-12, "{min}");
    }
}

#[test]
fn dense_assembly_consistent() {
    let f = small_forward(11, 9, 0.1, (3, 3));
    let dense = f.assemble_dense().unwrap();
    let mut r = rng(4);
    let m = normal_vec(&mut r, f.n());
    let d = normal_vec(&mut r, f.d());
    let via_dense = &dense * Mat::from_fn(f.n(), 1, |i, _| m[i]);
    let direct = f.apply(&Field::new(m)).unwrap();
    let scale = direct.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!((0..f.d()).all(|i| (via_dense[(i, 0)] - direct[i]).abs() <= 1e-13 * scale));
    let via_dense_t = dense.transpose() * Mat::from_fn(f.d(), 1, |i, _| d[i]);
    let direct_t = f.apply_transpose(&d).unwrap().values;
    let scale = direct_t.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!((0..f.n()).all(|i| (via_dense_t[(i, 0)] - direct_t[i]).abs() <= 1e-13 * scale));

    let big = small_forward(51, 51, 0.0, (2, 2));
    assert!(matches!(big.assemble_dense(), Err(OedError::SizeGuard { .. })));
}

#[test]
fn preconditioned_map_is_numerically_low_rank() {
    let f = small_forward(15, 11, 0.0, (5, 4));
    let prior = zero_mean_prior(*f.grid());
    let dense = to_na(f.assemble_dense().unwrap().as_ref());
    let ainv = dense_operator(&prior).try_inverse().unwrap();
    let sv = (dense * ainv).singular_values();
    let mut sv: Vec<f64> = sv.iter().cloned().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let full = f.d().min(f.n());
    let first_small = sv.iter().position(|&s| s < 1e-6 * sv[0]).expect("spectrum decays");
    assert!(first_small < full, "{first_small} vs {full}");
}

#[test]
fn adjoint_of_one_reading_reaches_upstream() {
    let g = Grid::new(21, 15, 1.5, 1.0).unwrap();
    let sensors = SensorNetwork::new(&g, vec![(0.5, 0.5)]).unwrap();
    let sample = UncertainSample::with_velocity(&g, Field::constant(g.n(), -0.05), Field::zeros(g.n()), 0.0).unwrap();
    let f = ForwardOperator::new(g, Arc::new(sample), cfg(60), Arc::new(sensors)).unwrap();
    let mut d = vec![0.0; f.d()];
    d[2] = 1.0; // tau = 11
    let lam = f.apply_transpose(&d).unwrap().values;
    let j = 7;
    let reach = 0.05 * 11.0;
    for i in 0..g.nx {
        let x = i as f64 * g.hx();
        if x >= 0.5 && x <= 0.5 + reach {
            assert!(lam[g.index(i, j)] > 1e-12, "x = {x}");
            // Mirror point downstream of the sensor carries less weight.
            let mirror = 1.0 - x;
            if mirror >= 0.0 && x > 0.5 + 2.0 * g.hx() {
                let im = (mirror / g.hx()).round() as usize;
                assert!(lam[g.index(im, j)] < lam[g.index(i, j)]);
            }
        }
    }
}

#[test]
fn windows_follow_initial_time() {
    let g = Grid::new(9, 7, 1.5, 1.0).unwrap();
    for t0 in [-1.0, -0.37, 0.0, 0.93] {
        let f = still_forward(g, t0, SensorNetwork::lattice(&g, 2, 2, 0.2).unwrap(), cfg(120));
        let dt = f.dt();
        assert!((dt - (16.0 - t0) / 120.0).abs() < 1e-15);
        for (j, &tau) in f.config.obs_times.iter().enumerate() {
            let w = f.window(j);
            let first = t0 + w[0].0 as f64 * dt;
            let last = t0 + w[w.len() - 1].0 as f64 * dt;
            assert!(first <= tau - 0.5 + 1e-12 && tau - 0.5 - first < dt);
            assert!(last >= tau + 0.5 - 1e-12 && last - (tau + 0.5) < dt);
            assert!((w.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn configuration_errors() {
    let g = Grid::new(9, 7, 1.5, 1.0).unwrap();
    let sensors = Arc::new(SensorNetwork::lattice(&g, 2, 2, 0.2).unwrap());
    let sample = |t0| Arc::new(UncertainSample::with_velocity(&g, Field::zeros(g.n()), Field::zeros(g.n()), t0).unwrap());
    assert!(ForwardOperator::new(g, sample(6.6), cfg(50), sensors.clone()).is_err());
    assert!(ForwardOperator::new(g, sample(0.0), cfg(5), sensors.clone()).is_err());
    let late = TransportConfig { obs_times: vec![7.0, 15.8], ..cfg(50) };
    assert!(ForwardOperator::new(g, sample(0.0), late, sensors.clone()).is_err());
    let f = ForwardOperator::new(g, sample(0.0), cfg(50), sensors).unwrap();
    assert!(matches!(f.apply(&Field::zeros(5)), Err(OedError::DimensionMismatch { .. })));
    assert!(matches!(f.apply_transpose(&[1.0; 3]), Err(OedError::DimensionMismatch { .. })));
}

#[test]
fn solves_are_counted() {
    let f = small_forward(9, 7, 0.0, (2, 2));
    let before = f.counter().get();
    f.apply(&Field::constant(f.n(), 1.0)).unwrap();
    assert_eq!(f.counter().get() - before, f.last_observed_step() as u64);
}

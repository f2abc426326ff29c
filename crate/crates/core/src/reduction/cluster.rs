//! k-means grouping of samples by the observations they produce for a fixed
//! probe field.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OedError, Result};
use crate::grid::{Field, Grid};
use crate::seed;
use crate::transport::ForwardOperator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Cluster index (0-based) per sample.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

impl Clustering {
    pub fn n_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == c).collect()
    }
}

/// A Gaussian bump: centre, width and amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub amplitude: f64,
}

pub fn default_probe_bumps(grid: &Grid) -> [Bump; 3] {
    let (a, b) = (grid.a, grid.b);
    [
        Bump { x: 0.3 * a, y: 0.35 * b, width: 0.08 * b, amplitude: 1.0 },
        Bump { x: 0.55 * a, y: 0.7 * b, width: 0.12 * b, amplitude: 0.7 },
        Bump { x: 0.8 * a, y: 0.3 * b, width: 0.1 * b, amplitude: 0.5 },
    ]
}

pub fn probe_field(grid: &Grid, bumps: &[Bump]) -> Field {
    grid.field_from_fn(|x, y| {
        bumps
            .iter()
            .map(|bp| {
                let r2 = (x - bp.x).powi(2) + (y - bp.y).powi(2);
                bp.amplitude * (-r2 / (2.0 * bp.width * bp.width)).exp()
            })
            .sum()
    })
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties resolved towards the lowest index.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centroids.iter().enumerate() {
        let d = dist2(p, m);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd iterations from k-means++ seeding, at most 100 rounds.
pub fn kmeans(points: &[Vec<f64>], l: usize, seed: u64) -> Result<Clustering> {
    let n = points.len();
    if n == 0 {
        return Err(OedError::Empty("clustering input"));
    }
    if l == 0 || l > n {
        return Err(OedError::invalid("clusters", format!("need 1 <= l <= {n}, got {l}")));
    }
    let mut rng = seed::rng(seed);
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    while centroids.len() < l {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &di) in d.iter().enumerate() {
                if di > 0.0 && t < di {
                    pick = i;
                    break;
                }
                t -= di;
            }
            pick
        } else {
            // Every point already coincides with a centre.
            centroids.len()
        };
        centroids.push(points[pick].clone());
    }

    let mut assignments = vec![usize::MAX; n];
    let mut iterations = 0;
    for it in 1..=100 {
        iterations = it;
        let new: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        let changed = new != assignments;
        assignments = new;
        // Refill empty clusters with the point farthest from its centre.
        for c in 0..l {
            if !assignments.contains(&c) {
                let far = (0..n)
                    .filter(|&i| assignments.iter().filter(|&&a| a == assignments[i]).count() > 1)
                    .max_by(|&i, &j| {
                        let di = dist2(&points[i], &centroids[assignments[i]]);
                        let dj = dist2(&points[j], &centroids[assignments[j]]);
                        di.total_cmp(&dj).then(j.cmp(&i))
                    })
                    .expect("l <= n leaves a cluster with two members");
                assignments[far] = c;
            }
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = (0..n).filter(|&i| assignments[i] == c).map(|i| &points[i]).collect();
            for (k, v) in centroid.iter_mut().enumerate() {
                *v = members.iter().map(|p| p[k]).sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(Clustering { assignments, centroids, iterations })
}

/// Clusters samples by `F_i m_probe`.
pub fn cluster_samples(samples: &[ForwardOperator], m_probe: &Field, l: usize, seed: u64) -> Result<Clustering> {
    use rayon::prelude::*;
    if m_probe.values.iter().all(|&v| v == 0.0) {
        return Err(OedError::invalid("m_probe", "probe field must be nonzero"));
    }
    let points = samples
        .par_iter()
        .map(|f| f.apply(m_probe))
        .collect::<Result<Vec<_>>>()?;
    kmeans(&points, l, seed)
}

//! Reduced-order surrogates `F A^-1 ~ Q B Q_hat^T` for a family of forward
//! maps, optionally with one basis pair per k-means cluster.

pub mod cluster;
pub mod crf;
pub mod gramians;
pub mod inner;

use std::sync::Arc;

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OedError, Result};
use crate::grid::Field;
use crate::prior::PriorModel;
use crate::seed;
use crate::transport::{ForwardOperator, Preconditioned};

pub use cluster::{cluster_samples, kmeans, Clustering};
pub use crf::{crf, sketch, Bases, CompositeSpectra, Sketch, Truncation};
pub use gramians::{exact_gramians, gramians, prior_gram, LowRankGramians, ObservationGramians};
pub use inner::{inner_matrix, inner_matrix_single_pass, SinglePass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerMode {
    #[default]
    TwoPass,
    SinglePass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionParams {
    pub mu: f64,
    pub clusters: usize,
    pub r_sketch: usize,
    pub mode: InnerMode,
    pub truncation: Truncation,
    /// Truncate range and co-range bases to a shared size.
    pub common_k: bool,
}

impl Default for ReductionParams {
    fn default() -> Self {
        Self { mu: 2e-3, clusters: 1, r_sketch: 40, mode: InnerMode::TwoPass, truncation: Truncation::Standard, common_k: true }
    }
}

/// Basis pair of one cluster and its prior Gram `Q_hat^T Gamma Q_hat`.
#[derive(Debug, Clone)]
pub struct ClusterBasis {
    pub q: Arc<Mat<f64>>,
    pub q_hat: Arc<Mat<f64>>,
    pub prior_gram: Arc<Mat<f64>>,
    pub k: usize,
    pub sv_y: Vec<f64>,
    pub sv_y_hat: Vec<f64>,
    pub members: Vec<usize>,
}

/// Surrogate of one prior-preconditioned forward map.
#[derive(Debug, Clone)]
pub struct ReducedForward {
    pub q: Arc<Mat<f64>>,
    pub q_hat: Arc<Mat<f64>>,
    pub b: Mat<f64>,
    pub cluster: usize,
}

impl ReducedForward {
    /// `Q B Q_hat^T x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        OedError::check_dim("surrogate input", self.q_hat.nrows(), x.len())?;
        let xm = faer::MatRef::from_column_major_slice(x, x.len(), 1);
        let y = self.q.as_ref() * (&self.b * (self.q_hat.transpose() * xm));
        Ok(y.col_as_slice(0).to_vec())
    }

    pub fn k(&self) -> (usize, usize) {
        (self.q.ncols(), self.q_hat.ncols())
    }
}

/// Everything produced by a reduction run.
#[derive(Debug, Clone)]
pub struct ReducedModels {
    pub models: Vec<ReducedForward>,
    pub bases: Vec<ClusterBasis>,
    pub clustering: Clustering,
}

impl ReducedModels {
    pub fn low_rank_gramians(&self, rel_tol: f64) -> Result<Vec<LowRankGramians>> {
        self.models
            .par_iter()
            .map(|m| {
                let gram = &self.bases[m.cluster].prior_gram;
                LowRankGramians::from_reduced(m.q.as_ref().as_ref(), m.b.as_ref(), gram.as_ref().as_ref(), rel_tol)
            })
            .collect()
    }
}

/// Sketches of every prior-preconditioned map; sample `i` uses the seed
/// `derive(seed, i)`, so prefixes of the sample list share sketches.
pub fn sketch_samples(samples: &[ForwardOperator], prior: &PriorModel, r_sketch: usize, seed: u64) -> Result<Vec<Sketch>> {
    samples
        .par_iter()
        .enumerate()
        .map(|(i, f)| sketch(&Preconditioned { forward: f, prior }, r_sketch, seed::derive(seed, i as u64)))
        .collect()
}

/// Bases per cluster from existing sketches.
pub fn cluster_bases(
    sketches: &[Sketch],
    clustering: &Clustering,
    prior: &PriorModel,
    params: &ReductionParams,
) -> Result<Vec<ClusterBasis>> {
    (0..clustering.n_clusters())
        .map(|c| {
            let members = clustering.members(c);
            let refs: Vec<&Sketch> = members.iter().map(|&i| &sketches[i]).collect();
            let b = CompositeSpectra::new(&refs)?.truncate(params.mu, params.truncation, params.common_k)?;
            let gram = prior_gram(prior, b.q_hat.as_ref())?;
            Ok(ClusterBasis {
                k: b.k,
                q: Arc::new(b.q),
                q_hat: Arc::new(b.q_hat),
                prior_gram: Arc::new(gram),
                sv_y: b.sv_y,
                sv_y_hat: b.sv_y_hat,
                members,
            })
        })
        .collect()
}

/// Core matrices of every sample against its cluster's bases.
pub fn reduce_with_bases(
    samples: &[ForwardOperator],
    prior: &PriorModel,
    sketches: &[Sketch],
    clustering: &Clustering,
    bases: &[ClusterBasis],
    mode: InnerMode,
) -> Result<Vec<ReducedForward>> {
    OedError::check_dim("sketch count", samples.len(), sketches.len())?;
    samples
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let c = clustering.assignments[i];
            let basis = &bases[c];
            let b = match mode {
                InnerMode::TwoPass => {
                    inner_matrix(&Preconditioned { forward: f, prior }, basis.q.as_ref().as_ref(), basis.q_hat.as_ref().as_ref())?
                }
                InnerMode::SinglePass => {
                    inner_matrix_single_pass(&sketches[i], basis.q.as_ref().as_ref(), basis.q_hat.as_ref().as_ref())?.b
                }
            };
            Ok(ReducedForward { q: basis.q.clone(), q_hat: basis.q_hat.clone(), b, cluster: c })
        })
        .collect()
}

/// Clusters the samples (when `params.clusters > 1`), sketches them, builds
/// per-cluster bases and the per-sample core matrices.
pub fn build_reduced_models(
    samples: &[ForwardOperator],
    prior: &PriorModel,
    params: &ReductionParams,
    m_probe: &Field,
    seed: u64,
) -> Result<ReducedModels> {
    if samples.is_empty() {
        return Err(OedError::Empty("sample list"));
    }
    let clustering = if params.clusters == 1 {
        Clustering { assignments: vec![0; samples.len()], centroids: vec![Vec::new()], iterations: 0 }
    } else {
        cluster_samples(samples, m_probe, params.clusters, seed::derive_tagged(seed, "kmeans", 0))?
    };
    let sketches = sketch_samples(samples, prior, params.r_sketch, seed::derive_tagged(seed, "sketch", 0))?;
    let bases = cluster_bases(&sketches, &clustering, prior, params)?;
    let models = reduce_with_bases(samples, prior, &sketches, &clustering, &bases, params.mode)?;
    Ok(ReducedModels { models, bases, clustering })
}

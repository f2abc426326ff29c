//! Composite randomized range finder: a joint pair of orthonormal bases for
//! the ranges of a family of maps and of their transposes.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{OedError, Result};
use crate::linalg::{gaussian_matrix, LinearMap};
use crate::seed;

/// Rule that turns a normalized singular spectrum into a basis size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truncation {
    /// Keep every direction with `sigma_j / sigma_1 > mu`.
    #[default]
    Standard,
    /// Largest index `j` with `sigma_j / sigma_1 <= mu` (all columns when no
    /// such index exists).
    Literal,
}

impl Truncation {
    pub fn rank(self, sv: &[f64], mu: f64) -> usize {
        let Some(&s1) = sv.first() else { return 0 };
        if s1 <= 0.0 {
            return 0;
        }
        match self {
            Truncation::Standard => sv.iter().take_while(|&&s| s / s1 > mu).count(),
            Truncation::Literal => sv
                .iter()
                .rposition(|&s| s / s1 <= mu)
                .map_or(sv.len(), |j| j + 1),
        }
    }
}

/// Gaussian test matrices and the sketches of one map.
#[derive(Debug, Clone)]
pub struct Sketch {
    /// `n x r` test matrix and `Y = F Omega` (`d x r`).
    pub omega: Mat<f64>,
    pub y: Mat<f64>,
    /// `d x r` test matrix and `Yhat = F^T Omega_hat` (`n x r`).
    pub omega_hat: Mat<f64>,
    pub y_hat: Mat<f64>,
    pub seed: u64,
}

pub fn sketch<M: LinearMap + ?Sized>(op: &M, r_sketch: usize, seed: u64) -> Result<Sketch> {
    if r_sketch == 0 {
        return Err(OedError::invalid("r_sketch", "must be at least 1"));
    }
    let omega = gaussian_matrix(&mut seed::rng(seed::derive_tagged(seed, "omega", 0)), op.ncols(), r_sketch);
    let omega_hat =
        gaussian_matrix(&mut seed::rng(seed::derive_tagged(seed, "omega-hat", 0)), op.nrows(), r_sketch);
    let y = op.apply(omega.as_ref());
    let y_hat = op.apply_transpose(omega_hat.as_ref());
    Ok(Sketch { omega, y, omega_hat, y_hat, seed })
}

/// Left singular vectors and values of `[X_1 .. X_N]`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub u: Mat<f64>,
    pub sv: Vec<f64>,
}

pub fn joint_spectrum(blocks: &[MatRef<'_, f64>]) -> Result<Spectrum> {
    let first = blocks.first().ok_or(OedError::Empty("sketch list"))?;
    let rows = first.nrows();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut x = Mat::<f64>::zeros(rows, cols);
    let mut c0 = 0;
    for b in blocks {
        OedError::check_dim("sketch rows", rows, b.nrows())?;
        x.as_mut().submatrix_mut(0, c0, rows, b.ncols()).copy_from(b);
        c0 += b.ncols();
    }
    if rows == 0 || cols == 0 {
        return Ok(Spectrum { u: Mat::zeros(rows, 0), sv: Vec::new() });
    }
    let svd = x
        .thin_svd()
        .map_err(|e| OedError::Solver(format!("SVD failed: {e:?}")))?;
    let sv = svd.S().column_vector().iter().copied().collect();
    Ok(Spectrum { u: svd.U().to_owned(), sv })
}

/// Output of the range finder.
#[derive(Debug, Clone)]
pub struct Bases {
    /// `d x kq` basis of the joint range.
    pub q: Mat<f64>,
    /// `n x kh` basis of the joint co-range.
    pub q_hat: Mat<f64>,
    pub sv_y: Vec<f64>,
    pub sv_y_hat: Vec<f64>,
    /// Basis size before per-side capping.
    pub k: usize,
}

/// Joint spectra of the two sketch families, computed once and truncated
/// for any number of tolerances.
#[derive(Debug, Clone)]
pub struct CompositeSpectra {
    pub range: Spectrum,
    pub corange: Spectrum,
}

impl CompositeSpectra {
    pub fn new(sketches: &[&Sketch]) -> Result<Self> {
        if sketches.is_empty() {
            return Err(OedError::Empty("sample list"));
        }
        let ys: Vec<_> = sketches.iter().map(|s| s.y.as_ref()).collect();
        let yh: Vec<_> = sketches.iter().map(|s| s.y_hat.as_ref()).collect();
        Ok(Self { range: joint_spectrum(&ys)?, corange: joint_spectrum(&yh)? })
    }

    /// Truncates both bases. With `common_k` they share the larger of the
    /// two per-side sizes, capped by the columns each side actually has.
    pub fn truncate(&self, mu: f64, rule: Truncation, common_k: bool) -> Result<Bases> {
        if !(mu > 0.0 && mu < 1.0) {
            return Err(OedError::invalid("mu", format!("must lie in (0, 1), got {mu}")));
        }
        let kq = rule.rank(&self.range.sv, mu);
        let kh = rule.rank(&self.corange.sv, mu);
        let k = kq.max(kh);
        let (kq, kh) = if common_k {
            (k.min(self.range.u.ncols()), k.min(self.corange.u.ncols()))
        } else {
            (kq, kh)
        };
        Ok(Bases {
            q: self.range.u.subcols(0, kq).to_owned(),
            q_hat: self.corange.u.subcols(0, kh).to_owned(),
            sv_y: self.range.sv.clone(),
            sv_y_hat: self.corange.sv.clone(),
            k,
        })
    }
}

/// Sketches every map and truncates the composite spectra at `mu`.
pub fn crf<M: LinearMap + Sync>(ops: &[M], mu: f64, r_sketch: usize, rule: Truncation, seed: u64) -> Result<(Bases, Vec<Sketch>)> {
    use rayon::prelude::*;
    if ops.is_empty() {
        return Err(OedError::Empty("sample list"));
    }
    if !(mu > 0.0 && mu < 1.0) {
        return Err(OedError::invalid("mu", format!("must lie in (0, 1), got {mu}")));
    }
    let sketches = ops
        .par_iter()
        .enumerate()
        .map(|(i, op)| sketch(op, r_sketch, seed::derive(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Sketch> = sketches.iter().collect();
    let bases = CompositeSpectra::new(&refs)?.truncate(mu, rule, true)?;
    Ok((bases, sketches))
}

//! Reduced core matrices `B = Q^T F Q_hat`, by direct application or from
//! retained sketches alone.

use faer::{Mat, MatRef, Side};

use crate::error::{OedError, Result};
use crate::linalg::LinearMap;
use crate::reduction::crf::Sketch;

/// `Q^T F Q_hat`, applying `F` or `F^T` to whichever basis is narrower.
pub fn inner_matrix<M: LinearMap + ?Sized>(op: &M, q: MatRef<'_, f64>, q_hat: MatRef<'_, f64>) -> Result<Mat<f64>> {
    OedError::check_dim("range basis rows", op.nrows(), q.nrows())?;
    OedError::check_dim("co-range basis rows", op.ncols(), q_hat.nrows())?;
    let (kq, kh) = (q.ncols(), q_hat.ncols());
    if kq == 0 || kh == 0 {
        return Ok(Mat::zeros(kq, kh));
    }
    if kh <= kq {
        let fq = op.apply(q_hat);
        Ok(q.transpose() * fq)
    } else {
        let ftq = op.apply_transpose(q);
        Ok((q_hat.transpose() * ftq).transpose().to_owned())
    }
}

/// Single-pass core matrix and how well it satisfies the sketch relations.
#[derive(Debug, Clone)]
pub struct SinglePass {
    pub b: Mat<f64>,
    /// `||B Q_hat^T Omega - Q^T Y||_F`.
    pub range_residual: f64,
    /// `||B^T Q^T Omega_hat - Q_hat^T Y_hat||_F`.
    pub corange_residual: f64,
    /// Number of core entries left at zero because the sketches carry no
    /// information about them.
    pub undetermined: usize,
}

/// Residuals of both sketch relations for a candidate core matrix.
pub fn single_pass_residuals(sk: &Sketch, q: MatRef<'_, f64>, q_hat: MatRef<'_, f64>, b: MatRef<'_, f64>) -> (f64, f64) {
    let x1 = q_hat.transpose() * &sk.omega;
    let r1 = q.transpose() * &sk.y;
    let x2 = q.transpose() * &sk.omega_hat;
    let r2 = q_hat.transpose() * &sk.y_hat;
    ((b * &x1 - &r1).norm_l2(), (b.transpose() * &x2 - &r2).norm_l2())
}

/// Least-squares core matrix from one sample's sketches: minimizes
/// `||B X1 - R1||^2 + ||X2^T B - R2^T||^2`, whose normal equations are the
/// Sylvester system `B X1 X1^T + X2 X2^T B = R1 X1^T + X2 R2^T`. Entries of
/// the eigenbasis where the system is singular get the minimum-norm value 0.
pub fn inner_matrix_single_pass(sk: &Sketch, q: MatRef<'_, f64>, q_hat: MatRef<'_, f64>) -> Result<SinglePass> {
    OedError::check_dim("range basis rows", sk.y.nrows(), q.nrows())?;
    OedError::check_dim("co-range basis rows", sk.y_hat.nrows(), q_hat.nrows())?;
    let (kq, kh) = (q.ncols(), q_hat.ncols());
    if kq == 0 || kh == 0 {
        return Ok(SinglePass { b: Mat::zeros(kq, kh), range_residual: 0.0, corange_residual: 0.0, undetermined: 0 });
    }
    let x1 = q_hat.transpose() * &sk.omega;
    let r1 = q.transpose() * &sk.y;
    let x2 = q.transpose() * &sk.omega_hat;
    let r2 = q_hat.transpose() * &sk.y_hat;
    let p1 = &x1 * x1.transpose();
    let p2 = &x2 * x2.transpose();
    let rhs = &r1 * x1.transpose() + &x2 * r2.transpose();
    let e1 = p1
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| OedError::Solver(format!("eigendecomposition failed: {e:?}")))?;
    let e2 = p2
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| OedError::Solver(format!("eigendecomposition failed: {e:?}")))?;
    let (v1, v2) = (e1.U(), e2.U());
    let d1: Vec<f64> = e1.S().column_vector().iter().copied().collect();
    let d2: Vec<f64> = e2.S().column_vector().iter().copied().collect();
    let scale = d1.iter().chain(&d2).fold(0.0f64, |m, &v| m.max(v.abs()));
    let tol = scale * 1e-12 * (kq.max(kh) as f64);
    let mut c = v2.transpose() * &rhs * v1;
    let mut undetermined = 0;
    for j in 0..kh {
        for i in 0..kq {
            let den = d2[i] + d1[j];
            if den > tol {
                c[(i, j)] /= den;
            } else {
                c[(i, j)] = 0.0;
                undetermined += 1;
            }
        }
    }
    if undetermined > 0 {
        log::warn!(
            "single-pass core: {undetermined} of {} entries undetermined by the sketches; set to zero",
            kq * kh
        );
    }
    let b = v2 * &c * v1.transpose();
    let (range_residual, corange_residual) = single_pass_residuals(sk, q, q_hat, b.as_ref());
    Ok(SinglePass { b, range_residual, corange_residual, undetermined })
}

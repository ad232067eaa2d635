//! Symmetric-matrix primitives and the proximal maps used by the ADMM.

use nalgebra::{Cholesky, DVector, SymmetricEigen};

use crate::error::{GfglError, Result};
use crate::Mat;

/// Spectral decomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub values: DVector<f64>,
    /// Columns are the eigenvectors, in the order of `values`.
    pub vectors: Mat,
}

impl EigenPair {
    /// `L diag(f(values)) Lᵀ`, symmetrized.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Mat {
        let p = self.values.len();
        let mut scaled = self.vectors.clone();
        for (j, &v) in self.values.iter().enumerate() {
            let fv = f(v);
            for i in 0..p {
                scaled[(i, j)] *= fv;
            }
        }
        let mut out = &scaled * self.vectors.transpose();
        symmetrize_in_place(&mut out);
        out
    }

    pub fn reconstruct(&self) -> Mat {
        self.reconstruct_with(|v| v)
    }
}

/// Full eigendecomposition of a symmetric matrix.
///
/// The input is symmetrized as `(A + Aᵀ)/2` first. Eigenvalues are returned
/// in ascending order; for repeated eigenvalues any orthonormal basis of the
/// eigenspace may come back.
pub fn sym_eigen(a: &Mat) -> Result<EigenPair> {
    if !a.is_square() {
        return Err(GfglError::DimensionMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(GfglError::NonFinite("matrix passed to sym_eigen".into()));
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let p = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(p, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = Mat::from_fn(p, p, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(EigenPair { values, vectors })
}

/// Positive root of `2u² + ηu − 1 = 0`.
///
/// This is the eigenvalue update of the log-det proximal step when the
/// quadratic penalty has total weight 2.
pub fn logdet_prox_eigenvalue_map(eta: f64) -> f64 {
    logdet_prox_eigenvalue_map_weighted(eta, 2.0)
}

/// Positive root of `w·u² + ηu − 1 = 0` for a quadratic weight `w > 0`.
pub fn logdet_prox_eigenvalue_map_weighted(eta: f64, weight: f64) -> f64 {
    let disc = (eta * eta + 4.0 * weight).sqrt();
    if eta >= 0.0 {
        // rationalized to avoid cancellation for large positive eta
        2.0 / (eta + disc)
    } else {
        (disc - eta) / (2.0 * weight)
    }
}

/// Solves `−U⁻¹ + weight·U + A = 0` for symmetric `A`, returning the unique
/// positive-definite `U`. This is the minimizer of
/// `−log det U + tr(AU) + (weight/2)‖U‖²_F`.
pub fn logdet_prox(a: &Mat, weight: f64) -> Result<Mat> {
    let eig = sym_eigen(a)?;
    Ok(eig.reconstruct_with(|eta| logdet_prox_eigenvalue_map_weighted(eta, weight)))
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(GfglError::InvalidInput(format!(
            "threshold must be finite and nonnegative, got {kappa}"
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn soft(x: f64, kappa: f64) -> f64 {
    if x > kappa {
        x - kappa
    } else if x < -kappa {
        x + kappa
    } else {
        0.0
    }
}

/// Entry-wise soft-thresholding of the off-diagonal entries; the diagonal is
/// copied through unchanged.
pub fn soft_threshold_offdiag(a: &Mat, kappa: f64) -> Result<Mat> {
    check_kappa(kappa)?;
    let mut out = a.clone();
    soft_threshold_offdiag_in_place(&mut out, kappa);
    Ok(out)
}

pub(crate) fn soft_threshold_offdiag_in_place(a: &mut Mat, kappa: f64) {
    let (r, c) = a.shape();
    for j in 0..c {
        for i in 0..r {
            if i != j {
                a[(i, j)] = soft(a[(i, j)], kappa);
            }
        }
    }
}

/// Proximal map of `κ‖·‖_F`: shrinks the whole matrix towards zero by `κ` in
/// Frobenius norm, returning an exact zero matrix when `‖Q‖_F ≤ κ`.
pub fn group_soft_threshold(q: &Mat, kappa: f64) -> Result<Mat> {
    check_kappa(kappa)?;
    let mut out = q.clone();
    group_soft_threshold_in_place(&mut out, kappa);
    Ok(out)
}

pub(crate) fn group_soft_threshold_in_place(q: &mut Mat, kappa: f64) {
    let norm = q.norm();
    if norm <= kappa || norm == 0.0 {
        q.fill(0.0);
    } else {
        *q *= (norm - kappa) / norm;
    }
}

/// The matrix norms used by the diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixNorms {
    pub frobenius: f64,
    /// Largest absolute entry.
    pub max_abs: f64,
    /// Sum of absolute off-diagonal entries.
    pub l1_offdiag: f64,
    /// Largest absolute row sum.
    pub operator_inf: f64,
}

pub fn norms(a: &Mat) -> MatrixNorms {
    let mut l1_offdiag = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if i != j {
                l1_offdiag += a[(i, j)].abs();
            }
        }
    }
    MatrixNorms {
        frobenius: a.norm(),
        max_abs: max_abs(a),
        l1_offdiag,
        operator_inf: operator_inf_norm(a),
    }
}

pub fn max_abs(a: &Mat) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn operator_inf_norm(a: &Mat) -> f64 {
    (0..a.nrows())
        .map(|i| a.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn symmetrize(a: &Mat) -> Mat {
    let mut out = a.clone();
    symmetrize_in_place(&mut out);
    out
}

pub(crate) fn symmetrize_in_place(a: &mut Mat) {
    let p = a.nrows();
    for j in 0..p {
        for i in (j + 1)..p {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}

pub fn is_symmetric(a: &Mat, tol: f64) -> bool {
    a.is_square()
        && (0..a.nrows()).all(|i| (0..i).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= tol))
}

/// `log det A` for symmetric positive-definite `A`, `None` otherwise.
pub fn logdet_spd(a: &Mat) -> Option<f64> {
    let chol = Cholesky::new(a.clone())?;
    let l = chol.l_dirty();
    Some(2.0 * (0..a.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

/// Inverse of a symmetric positive-definite matrix, symmetrized.
pub fn inverse_spd(a: &Mat) -> Option<Mat> {
    let chol = Cholesky::new(a.clone())?;
    let mut inv = chol.inverse();
    symmetrize_in_place(&mut inv);
    Some(inv)
}

pub fn min_eigenvalue(a: &Mat) -> Result<f64> {
    Ok(sym_eigen(a)?.values[0])
}

pub fn max_eigenvalue(a: &Mat) -> Result<f64> {
    let e = sym_eigen(a)?;
    Ok(e.values[e.values.len() - 1])
}

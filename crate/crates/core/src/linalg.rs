//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{DrmaError, Result};

/// Replaces `m` by `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Symmetric eigen-decomposition with eigenvalues sorted non-increasing and
/// eigenvectors in the matching columns.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(DrmaError::Eigen("matrix has non-finite entries".into()));
    }
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let p = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(p, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(DrmaError::Eigen("non-finite eigenvalue".into()));
    }
    Ok((values, vectors))
}

/// `(m + ridge·I)^{-1/2}` for a symmetric positive semi-definite `m`.
pub fn inv_sqrt_psd(m: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let p = m.nrows();
    let shifted = m + DMatrix::identity(p, p) * ridge;
    let (vals, vecs) = sym_eigen_desc(&shifted)?;
    let smallest = vals[p - 1];
    if smallest <= 0.0 || smallest < vals[0] * 1e-14 {
        return Err(DrmaError::Singular(format!(
            "covariance not invertible (smallest eigenvalue {smallest:.3e})"
        )));
    }
    let scale = DVector::from_iterator(p, vals.iter().map(|v| v.sqrt().recip()));
    Ok(&vecs * DMatrix::from_diagonal(&scale) * vecs.transpose())
}

/// Orthonormal basis of the column span of `m` (thin QR).
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let k = m.ncols();
    let q = m.clone().qr().q();
    q.columns(0, k).into_owned()
}

/// Flips column signs so the largest-magnitude entry of every column is
/// positive. The first maximal entry wins ties.
pub fn fix_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0.0_f64;
        let mut sign = 1.0;
        for &v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}

/// Largest principal angle (radians) between the column spans of two
/// matrices with orthonormal columns.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.nrows(), b.nrows());
    if a.ncols() == 0 || b.ncols() == 0 {
        return 0.0;
    }
    // sin of the largest angle is the spectral norm of the part of the
    // smaller basis that lies outside the larger span.
    let (small, large) = if a.ncols() <= b.ncols() { (a, b) } else { (b, a) };
    let residual = small - large * (large.transpose() * small);
    let s = residual
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0_f64, f64::max);
    s.min(1.0).asin()
}

/// Ratio of the largest to smallest singular value; infinite when singular.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves a symmetric positive definite system, returning `None` when the
/// Cholesky factorization fails.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().cholesky().map(|c| c.solve(b))
}

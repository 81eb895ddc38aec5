//! Dense complex linear algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, SymmetricEigen, SVD};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{gaussian_matrix, CMatrix};

/// Relative tolerance of the numerical-rank criterion.
pub const RANK_EPS: f64 = 1e-10;

/// Largest condition number accepted by the pseudo-inverses.
pub const COND_LIMIT: f64 = 1e12;

/// Relative Hermitian-symmetry residual above which a matrix is rejected.
pub const HERMITIAN_TOL: f64 = 1e-8;

/// Singular values in descending order. Empty matrices have none.
pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = SVD::new(m.clone(), false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `RANK_EPS * sigma_max * max(rows, cols)`.
pub fn numerical_rank(m: &CMatrix) -> usize {
    let s = singular_values(m);
    let Some(&smax) = s.first() else { return 0 };
    if smax == 0.0 {
        return 0;
    }
    let tol = RANK_EPS * smax * m.nrows().max(m.ncols()) as f64;
    s.iter().filter(|&&x| x > tol).count()
}

/// Smallest singular value, or `None` for an empty matrix.
pub fn min_singular_value(m: &CMatrix) -> Option<f64> {
    singular_values(m).last().copied()
}

/// Moore-Penrose inverse of a full-rank matrix, via the SVD.
///
/// For a tall matrix this is the left inverse `(A^H A)^-1 A^H`, for a wide one
/// the right inverse `A^H (A A^H)^-1`. Fails with the observed condition number
/// when it exceeds `COND_LIMIT`.
pub fn full_rank_pinv(m: &CMatrix) -> std::result::Result<CMatrix, f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(CMatrix::zeros(cols, rows));
    }
    let svd = SVD::new(m.clone(), true, true);
    let s = &svd.singular_values;
    let smax = s.iter().copied().fold(0.0, f64::max);
    let smin = s.iter().copied().fold(f64::INFINITY, f64::min);
    let cond = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    if !(cond <= COND_LIMIT) {
        return Err(cond);
    }
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    // pinv = V diag(1/s) U^H
    let mut v = v_t.adjoint();
    for (j, &sj) in s.iter().enumerate() {
        v.column_mut(j).scale_mut(1.0 / sj);
    }
    Ok(v * u.adjoint())
}

/// 2-norm condition number; infinite for singular matrices.
pub fn condition_number(m: &CMatrix) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// `||A - A^H||_F / max(1, ||A||_F)`.
pub fn hermitian_residual(m: &CMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    (m - m.adjoint()).norm() / m.norm().max(1.0)
}

/// Rotates `v` so its first non-negligible component is real and positive.
fn fix_phase(mut v: nalgebra::DVectorViewMut<'_, Complex64>) {
    let scale = v.norm();
    if scale == 0.0 {
        return;
    }
    if let Some(z) = v.iter().copied().find(|z| z.norm() > 1e-12 * scale) {
        let phase = z.conj() / z.norm();
        for x in v.iter_mut() {
            *x *= phase;
        }
    }
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues ascending.
///
/// Equal eigenvalues keep the decomposition's output order; every
/// eigenvector is phase-fixed (first significant entry real positive).
pub fn hermitian_eigh(m: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    let residual = hermitian_residual(m);
    if !(residual <= HERMITIAN_TOL) {
        return Err(Error::NotHermitian { residual });
    }
    let n = m.nrows();
    if n == 0 {
        return Ok((Vec::new(), CMatrix::zeros(0, 0)));
    }
    let sym = (m + m.adjoint()).scale(0.5);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
        fix_phase(vectors.column_mut(dst));
    }
    Ok((values, vectors))
}

/// Orthonormal eigenvectors of the `d` smallest eigenvalues, ascending.
pub fn min_eigen_subspace(m: &CMatrix, d: usize) -> Result<CMatrix> {
    if d > m.nrows() {
        return Err(Error::DimensionMismatch {
            field: "subspace dimension".into(),
            detail: format!("{d} exceeds matrix order {}", m.nrows()),
        });
    }
    let (_, vectors) = hermitian_eigh(m)?;
    Ok(vectors.columns(0, d).into_owned())
}

/// Natural log-determinant of a Hermitian positive-definite matrix.
pub fn ln_det_hpd(m: &CMatrix) -> Option<f64> {
    if m.nrows() == 0 {
        return Some(0.0);
    }
    let sym = (m + m.adjoint()).scale(0.5);
    let chol = Cholesky::new(sym)?;
    let l = chol.l_dirty();
    Some((0..m.nrows()).map(|i| 2.0 * l[(i, i)].re.ln()).sum())
}

/// `n x d` matrix with orthonormal columns, Haar-distributed.
///
/// QR of a Gaussian matrix with the phases of `R`'s diagonal pushed into `Q`.
pub fn random_orthonormal<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> CMatrix {
    assert!(
        d <= n,
        "cannot draw {d} orthonormal columns in dimension {n}"
    );
    if d == 0 {
        return CMatrix::zeros(n, 0);
    }
    let g = gaussian_matrix(n, d, rng);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        let rjj = r[(j, j)];
        if rjj.norm() > 0.0 {
            let phase = rjj / rjj.norm();
            for x in q.column_mut(j).iter_mut() {
                *x *= phase;
            }
        }
    }
    q
}

/// Block-diagonal matrix holding `n` copies of `block`.
pub fn block_diag_repeat(block: &CMatrix, n: usize) -> CMatrix {
    let (r, c) = block.shape();
    let mut out = CMatrix::zeros(r * n, c * n);
    for i in 0..n {
        out.view_mut((i * r, i * c), (r, c)).copy_from(block);
    }
    out
}

/// Stacks matrices vertically; all must share a column count.
pub fn vstack(blocks: &[CMatrix], cols: usize) -> CMatrix {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, 0), b.shape()).copy_from(b);
        at += b.nrows();
    }
    out
}

/// Concatenates matrices horizontally; all must share a row count.
pub fn hstack(blocks: &[CMatrix], rows: usize) -> CMatrix {
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((0, at), b.shape()).copy_from(b);
        at += b.ncols();
    }
    out
}

//! Dense linear-algebra helpers shared by the solver modules.
//!
//! Everything here works on small `DMatrix<f64>` values. The complex Schur
//! form with eigenvalue reordering is the workhorse for invariant subspaces
//! (Riccati, undetectable subspace) and for the Bartels-Stewart Lyapunov
//! solver.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type CMat = DMatrix<Complex64>;

pub fn to_complex(m: &Mat) -> CMat {
    m.map(|x| Complex64::new(x, 0.0))
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &Mat, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol
}

/// Induced infinity norm (max absolute row sum).
pub fn norm_inf(m: &Mat) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn norm2(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Smallest and largest eigenvalue of the symmetric part of `m`.
pub fn sym_eig_range(m: &Mat) -> (f64, f64) {
    if m.is_empty() {
        return (f64::INFINITY, f64::NEG_INFINITY);
    }
    let ev = symmetrize(m).symmetric_eigenvalues();
    (ev.min(), ev.max())
}

pub fn lambda_max_sym(m: &Mat) -> f64 {
    sym_eig_range(m).1
}

pub fn lambda_min_sym(m: &Mat) -> f64 {
    sym_eig_range(m).0
}

/// Largest real part over the spectrum; `-inf` for an empty matrix.
pub fn spectral_abscissa(m: &Mat) -> f64 {
    if m.is_empty() {
        return f64::NEG_INFINITY;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn eigenvalues(m: &Mat) -> Vec<Complex64> {
    if m.is_empty() {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().copied().collect()
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

pub fn block_diag(blocks: &[Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn vstack(blocks: &[Mat]) -> Mat {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(b);
        r += b.nrows();
    }
    out
}

pub fn hstack(blocks: &[Mat]) -> Mat {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.view_mut((0, c), (rows, b.ncols())).copy_from(b);
        c += b.ncols();
    }
    out
}

pub fn inverse(m: &Mat) -> Result<Mat> {
    if m.is_empty() {
        return Ok(m.clone());
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular matrix".into()))
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &Mat) -> Result<Mat> {
    if m.is_empty() {
        return Ok(m.clone());
    }
    let chol = symmetrize(m)
        .cholesky()
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Orthonormal basis of the null space of `m`.
///
/// A singular value counts as zero when it is at most `rel_tol * sigma_max`
/// (any singular value counts as zero if `m` vanishes identically).
pub fn null_space(m: &Mat, rel_tol: f64) -> Mat {
    let smax = if m.is_empty() { 0.0 } else { norm2(m) };
    null_space_abs(m, rel_tol * smax)
}

/// Orthonormal basis of the null space of `m`, counting singular values
/// `<= tol` as zero.
pub fn null_space_abs(m: &Mat, tol: f64) -> Mat {
    let n = m.ncols();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    if m.nrows() == 0 || m.amax() == 0.0 {
        return Mat::identity(n, n);
    }
    // Pad to at least n rows so that the SVD returns a full V.
    let rows = m.nrows().max(n);
    let mut padded = Mat::zeros(rows, n);
    padded.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let cols: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s <= tol)
        .map(|(i, _)| v_t.row(i).transpose())
        .collect();
    if cols.is_empty() {
        Mat::zeros(n, 0)
    } else {
        Mat::from_columns(&cols)
    }
}

/// Orthonormal basis of the orthogonal complement of `im(basis)`, where
/// `basis` has orthonormal columns.
pub fn orth_complement(basis: &Mat) -> Mat {
    let n = basis.nrows();
    let k = basis.ncols();
    if k == 0 {
        return Mat::identity(n, n);
    }
    if k == n {
        return Mat::zeros(n, 0);
    }
    let proj = Mat::identity(n, n) - basis * basis.transpose();
    let eig = symmetrize(&proj).symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let cols: Vec<DVector<f64>> = idx[..n - k]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    Mat::from_columns(&cols)
}

/// Orthonormal real basis of a conjugation-closed complex subspace of
/// dimension `k` spanned by the columns of `z`.
pub fn real_basis(z: &CMat, k: usize) -> Mat {
    let n = z.nrows();
    if k == 0 {
        return Mat::zeros(n, 0);
    }
    let re = z.map(|c| c.re);
    let im = z.map(|c| c.im);
    let stacked = hstack(&[re, im]);
    let svd = stacked.svd(true, false);
    let u = svd.u.expect("u requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let cols: Vec<DVector<f64>> = order[..k]
        .iter()
        .map(|&i| u.column(i).into_owned())
        .collect();
    Mat::from_columns(&cols)
}

pub fn sigma_max_complex(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Complex Schur decomposition `A = Q T Q^H` with `T` upper triangular.
#[derive(Debug, Clone)]
pub struct ComplexSchur {
    pub q: CMat,
    pub t: CMat,
}

impl ComplexSchur {
    pub fn new(a: &Mat) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Ok(Self {
                q: CMat::zeros(0, 0),
                t: CMat::zeros(0, 0),
            });
        }
        let schur = nalgebra::linalg::Schur::try_new(to_complex(a), f64::EPSILON, 10_000 * n)
            .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
        let (q, mut t) = schur.unpack();
        for j in 0..n {
            for i in j + 1..n {
                t[(i, j)] = Complex64::new(0.0, 0.0);
            }
        }
        Ok(Self { q, t })
    }

    pub fn eigenvalues(&self) -> Vec<Complex64> {
        (0..self.t.nrows()).map(|i| self.t[(i, i)]).collect()
    }

    /// Swap the adjacent diagonal entries `k` and `k + 1` with a unitary
    /// rotation, keeping `A = Q T Q^H`.
    fn swap(&mut self, k: usize) {
        let a = self.t[(k, k)];
        let b = self.t[(k + 1, k + 1)];
        let c = self.t[(k, k + 1)];
        // eigenvector of [[a, c], [0, b]] for eigenvalue b
        let (v1, v2) = (c, b - a);
        let nrm = (v1.norm_sqr() + v2.norm_sqr()).sqrt();
        if nrm == 0.0 {
            return;
        }
        let (v1, v2) = (v1 / nrm, v2 / nrm);
        // Z = [[v1, -conj(v2)], [v2, conj(v1)]]
        let z = [[v1, -v2.conj()], [v2, v1.conj()]];
        let n = self.t.nrows();
        for j in 0..n {
            let x = self.t[(k, j)];
            let y = self.t[(k + 1, j)];
            // Z^H row action
            self.t[(k, j)] = z[0][0].conj() * x + z[1][0].conj() * y;
            self.t[(k + 1, j)] = z[0][1].conj() * x + z[1][1].conj() * y;
        }
        for i in 0..n {
            let x = self.t[(i, k)];
            let y = self.t[(i, k + 1)];
            self.t[(i, k)] = x * z[0][0] + y * z[1][0];
            self.t[(i, k + 1)] = x * z[0][1] + y * z[1][1];
            let x = self.q[(i, k)];
            let y = self.q[(i, k + 1)];
            self.q[(i, k)] = x * z[0][0] + y * z[1][0];
            self.q[(i, k + 1)] = x * z[0][1] + y * z[1][1];
        }
        self.t[(k + 1, k)] = Complex64::new(0.0, 0.0);
        self.t[(k, k)] = b;
        self.t[(k + 1, k + 1)] = a;
    }

    /// Move every eigenvalue satisfying `select` to the leading positions,
    /// preserving the relative order inside both groups. Returns the number
    /// of selected eigenvalues.
    pub fn reorder<F: Fn(Complex64) -> bool>(&mut self, select: F) -> usize {
        let n = self.t.nrows();
        let mut next = 0;
        for j in 0..n {
            if select(self.t[(j, j)]) {
                let mut pos = j;
                while pos > next {
                    self.swap(pos - 1);
                    pos -= 1;
                }
                next += 1;
            }
        }
        next
    }

    /// Real orthonormal basis of the invariant subspace belonging to the
    /// leading `k` eigenvalues (which must form a conjugation-closed set).
    pub fn leading_real_basis(&self, k: usize) -> Mat {
        let z = self.q.columns(0, k).into_owned();
        real_basis(&z, k)
    }
}

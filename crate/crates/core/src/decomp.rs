//! Detectability decomposition of a pair `(C_i, A)`.
//!
//! The undetectable subspace is `S = N ∩ ker p+(A)`, where `N` is the
//! unobservable subspace and `ker p+(A)` is the spectral subspace of the
//! closed-right-half-plane eigenvalues. An orthogonal `T = [T1 T2]` with
//! `im(T2) = S` brings `A` to block lower-triangular form with a detectable
//! leading pair `(C1, A11)`.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{
    hstack, norm2, null_space, null_space_abs, orth_complement, to_complex, vstack,
    ComplexSchur, Mat,
};

/// Relative rank tolerance for the unobservable subspace.
const OBSERVABILITY_RANK_TOL: f64 = 1e-10;
/// Principal-angle sine below which two subspaces are considered to share a direction.
const INTERSECTION_TOL: f64 = 1e-8;

/// Margin for classifying an eigenvalue as closed-right-half-plane:
/// `Re λ >= -margin` with `margin = 1e-9 ||A||`.
pub fn crhp_margin(a: &Mat) -> f64 {
    1e-9 * norm2(a)
}

/// Orthonormal basis (n × k) of the unobservable subspace of `(C, A)`.
pub fn unobservable_subspace(c: &Mat, a: &Mat) -> Mat {
    let n = a.nrows();
    let mut blocks = Vec::with_capacity(n);
    let mut ca = c.clone();
    for _ in 0..n {
        blocks.push(ca.clone());
        ca = &ca * a;
    }
    let obs = vstack(&blocks);
    null_space(&obs, OBSERVABILITY_RANK_TOL)
}

/// Orthonormal basis of `ker p+(A)`, the invariant subspace of the
/// eigenvalues with `Re λ >= -margin`.
pub fn unstable_subspace(a: &Mat) -> Result<Mat> {
    let margin = crhp_margin(a);
    let mut schur = ComplexSchur::new(a)?;
    let k = schur.reorder(|z| z.re >= -margin);
    Ok(schur.leading_real_basis(k))
}

/// Orthonormal basis of the undetectable subspace `S` of `(C, A)`; zero
/// columns when the pair is detectable.
pub fn undetectable_subspace(c: &Mat, a: &Mat) -> Result<Mat> {
    let n = a.nrows();
    let unobs = unobservable_subspace(c, a);
    if unobs.ncols() == 0 {
        return Ok(Mat::zeros(n, 0));
    }
    let unstable = unstable_subspace(a)?;
    if unstable.ncols() == 0 {
        return Ok(Mat::zeros(n, 0));
    }
    // x = N y lies in im(U) iff (I - U U^T) N y = 0
    let proj = Mat::identity(n, n) - &unstable * unstable.transpose();
    let y = null_space_abs(&(proj * &unobs), INTERSECTION_TOL);
    if y.ncols() == 0 {
        return Ok(Mat::zeros(n, 0));
    }
    Ok(&unobs * y)
}

pub fn is_detectable(c: &Mat, a: &Mat) -> Result<bool> {
    Ok(undetectable_subspace(c, a)?.ncols() == 0)
}

/// Hautus test: `[λI - A; C]` has full column rank for every eigenvalue with
/// `Re λ >= -margin`. Independent of the subspace construction above.
pub fn pbh_detectable(c: &Mat, a: &Mat) -> bool {
    let n = a.nrows();
    if n == 0 {
        return true;
    }
    let margin = crhp_margin(a);
    let scale = norm2(a).max(norm2(c)).max(1.0);
    let ac = to_complex(a);
    let cc = to_complex(c);
    a.complex_eigenvalues().iter().all(|lam| {
        if lam.re < -margin {
            return true;
        }
        let mut m = crate::linalg::CMat::zeros(n + c.nrows(), n);
        m.view_mut((0, 0), (n, n))
            .copy_from(&(crate::linalg::CMat::identity(n, n) * *lam - &ac));
        m.view_mut((n, 0), (c.nrows(), n)).copy_from(&cc);
        let smin = m.svd(false, false).singular_values.min();
        smin > 1e-8 * scale
    })
}

/// Per-node detectability decomposition.
#[derive(Debug, Clone)]
pub struct NodeDecomposition {
    /// Orthogonal basis `[T1 T2]`; `T2` spans the undetectable subspace.
    pub t: Mat,
    /// Dimension of the detectable part.
    pub v: usize,
    pub a11: Mat,
    pub a21: Mat,
    pub a22: Mat,
    pub c1: Mat,
    pub e1: Mat,
    pub e2: Mat,
    pub h1: Mat,
    pub h2: Mat,
    /// Largest entry of the upper-right block of `T^T A T` before it was zeroed.
    pub upper_right_leak: f64,
    /// Largest entry of `C_i T2`.
    pub c_leak: f64,
}

impl NodeDecomposition {
    pub fn n(&self) -> usize {
        self.t.nrows()
    }

    /// Dimension of the undetectable part, `n - v`.
    pub fn s(&self) -> usize {
        self.n() - self.v
    }

    pub fn t1(&self) -> Mat {
        self.t.columns(0, self.v).into_owned()
    }

    pub fn t2(&self) -> Mat {
        self.t.columns(self.v, self.s()).into_owned()
    }

    /// `T diag(X1, X2) T^T`.
    pub fn lift(&self, x1: &Mat, x2: &Mat) -> Mat {
        let d = crate::linalg::block_diag(&[x1.clone(), x2.clone()]);
        &self.t * d * self.t.transpose()
    }

    pub fn record(&self) -> DecompositionRecord {
        DecompositionRecord {
            t: self.t.clone(),
            v: self.v,
            upper_right_leak: self.upper_right_leak,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionRecord {
    #[serde(with = "crate::io::mat")]
    pub t: Mat,
    pub v: usize,
    pub upper_right_leak: f64,
}

pub fn detectability_decomposition(
    c_i: &Mat,
    a: &Mat,
    e: &Mat,
    h: &Mat,
) -> Result<NodeDecomposition> {
    let n = a.nrows();
    let t2 = undetectable_subspace(c_i, a)?;
    let t1 = orth_complement(&t2);
    let v = t1.ncols();
    let s = n - v;
    let t = hstack(&[t1, t2]);

    let mut at = t.transpose() * a * &t;
    let upper_right_leak = if v > 0 && s > 0 {
        at.view((0, v), (v, s)).amax()
    } else {
        0.0
    };
    at.view_mut((0, v), (v, s)).fill(0.0);
    let ct = c_i * &t;
    let c_leak = if s > 0 {
        ct.view((0, v), (ct.nrows(), s)).amax()
    } else {
        0.0
    };
    let et = t.transpose() * e;
    let ht = h * &t;

    Ok(NodeDecomposition {
        a11: at.view((0, 0), (v, v)).into_owned(),
        a21: at.view((v, 0), (s, v)).into_owned(),
        a22: at.view((v, v), (s, s)).into_owned(),
        c1: ct.view((0, 0), (ct.nrows(), v)).into_owned(),
        e1: et.view((0, 0), (v, e.ncols())).into_owned(),
        e2: et.view((v, 0), (s, e.ncols())).into_owned(),
        h1: ht.view((0, 0), (h.nrows(), v)).into_owned(),
        h2: ht.view((0, v), (h.nrows(), s)).into_owned(),
        t,
        v,
        upper_right_leak,
        c_leak,
    })
}

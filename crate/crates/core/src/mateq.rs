//! Dense matrix-equation kernels: Lyapunov and filter Riccati solves,
//! Hurwitz test, H2 and H-infinity norms, and the Lyapunov-type
//! certificate checks behind them.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    lambda_max_sym, lambda_min_sym, norm2, sigma_max_complex, spectral_abscissa, symmetrize,
    to_complex, CMat, ComplexSchur, Mat,
};

/// Strict Hurwitz test: `max Re eig(A) < -1e-10 ||A||`.
pub fn is_hurwitz(a: &Mat) -> bool {
    if a.is_empty() {
        return true;
    }
    spectral_abscissa(a) < -1e-10 * norm2(a)
}

fn require_hurwitz(a: &Mat) -> Result<()> {
    if is_hurwitz(a) {
        Ok(())
    } else {
        Err(Error::NotHurwitz {
            abscissa: spectral_abscissa(a),
        })
    }
}

/// Solves `A^T P + P A + Q = 0` for Hurwitz `A` (Bartels-Stewart on the
/// complex Schur form).
pub fn solve_lyapunov(a: &Mat, q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    if q.shape() != (n, n) {
        return Err(Error::DimensionMismatch("Q must match A".into()));
    }
    require_hurwitz(a)?;
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let schur = ComplexSchur::new(a)?;
    let (u, t) = (&schur.q, &schur.t);
    // T^H Y + Y T = -U^H Q U
    let qt = u.adjoint() * to_complex(q) * u;
    let mut y = CMat::zeros(n, n);
    for j in 0..n {
        let mut rhs: Vec<Complex64> = (0..n).map(|i| -qt[(i, j)]).collect();
        for k in 0..j {
            let tkj = t[(k, j)];
            for (i, r) in rhs.iter_mut().enumerate() {
                *r -= y[(i, k)] * tkj;
            }
        }
        let tjj = t[(j, j)];
        for i in 0..n {
            let mut s = rhs[i];
            for l in 0..i {
                s -= t[(l, i)].conj() * y[(l, j)];
            }
            y[(i, j)] = s / (t[(i, i)].conj() + tjj);
        }
    }
    let p = (u * y * u.adjoint()).map(|z| z.re);
    Ok(symmetrize(&p))
}

/// Solution of the filter Riccati equation
/// `A Q + Q A^T - Q C^T C Q + δ I = 0` and the gain `G = Q C^T`.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub q: Mat,
    pub g: Mat,
    pub residual: f64,
}

/// Stabilizing solution via the stable invariant subspace of the Hamiltonian
/// `[[A^T, -C^T C], [-δ I, -A]]`. The result satisfies the strict Riccati
/// inequality with margin `δ`, and `A - G C` is Hurwitz.
pub fn solve_filter_riccati(a: &Mat, c: &Mat, delta: f64) -> Result<RiccatiSolution> {
    let v = a.nrows();
    if !a.is_square() || c.ncols() != v {
        return Err(Error::DimensionMismatch("Riccati: A must be square, C must have A's columns".into()));
    }
    if delta <= 0.0 {
        return Err(Error::InvalidInput("Riccati margin must be positive".into()));
    }
    if v == 0 {
        return Ok(RiccatiSolution {
            q: Mat::zeros(0, 0),
            g: Mat::zeros(0, c.nrows()),
            residual: 0.0,
        });
    }
    let ctc = c.transpose() * c;
    let mut ham = Mat::zeros(2 * v, 2 * v);
    ham.view_mut((0, 0), (v, v)).copy_from(&a.transpose());
    ham.view_mut((0, v), (v, v)).copy_from(&(-&ctc));
    ham.view_mut((v, 0), (v, v)).copy_from(&(-delta * Mat::identity(v, v)));
    ham.view_mut((v, v), (v, v)).copy_from(&(-a));

    let mut schur = ComplexSchur::new(&ham)?;
    let axis_tol = 1e-10 * norm2(&ham).max(1.0);
    if schur.eigenvalues().iter().any(|z| z.re.abs() <= axis_tol) {
        return Err(Error::RiccatiFailed(
            "Hamiltonian has eigenvalues on the imaginary axis (pair not detectable?)".into(),
        ));
    }
    let k = schur.reorder(|z| z.re < 0.0);
    if k != v {
        return Err(Error::RiccatiFailed(format!(
            "expected {v} stable Hamiltonian eigenvalues, found {k}"
        )));
    }
    let basis = schur.leading_real_basis(v);
    let u1 = basis.rows(0, v).into_owned();
    let u2 = basis.rows(v, v).into_owned();
    let u1_inv = u1
        .try_inverse()
        .ok_or_else(|| Error::RiccatiFailed("stable subspace is not a graph".into()))?;
    let q = symmetrize(&(u2 * u1_inv));
    if lambda_min_sym(&q) <= 0.0 {
        return Err(Error::RiccatiFailed("stabilizing solution is not positive definite".into()));
    }
    let g = &q * c.transpose();
    if !is_hurwitz(&(a - &g * c)) {
        return Err(Error::RiccatiFailed("closed loop A - G C is not Hurwitz".into()));
    }
    let res = a * &q + &q * a.transpose() - &q * &ctc * &q + delta * Mat::identity(v, v);
    Ok(RiccatiSolution {
        residual: res.amax(),
        q,
        g,
    })
}

/// `x' = A x + E d`, `y = C x` with `A` Hurwitz.
#[derive(Debug, Clone)]
pub struct StableSystem {
    a: Mat,
    e: Mat,
    c: Mat,
}

impl StableSystem {
    pub fn new(a: Mat, e: Mat, c: Mat) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || e.nrows() != n || c.ncols() != n {
            return Err(Error::DimensionMismatch("inconsistent (A, E, C)".into()));
        }
        require_hurwitz(&a)?;
        Ok(Self { a, e, c })
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn e(&self) -> &Mat {
        &self.e
    }
    pub fn c(&self) -> &Mat {
        &self.c
    }

    /// `C (jω I - A)^{-1} E`
    pub fn frequency_response(&self, omega: f64) -> CMat {
        let n = self.a.nrows();
        let jw = CMat::identity(n, n) * Complex64::new(0.0, omega);
        let m = jw - to_complex(&self.a);
        let x = m
            .lu()
            .solve(&to_complex(&self.e))
            .expect("jωI - A is nonsingular for Hurwitz A");
        to_complex(&self.c) * x
    }

    pub fn sigma_max(&self, omega: f64) -> f64 {
        sigma_max_complex(&self.frequency_response(omega))
    }
}

/// Squared H2 norm `tr(E^T P_o E)`, with `P_o` the observability Gramian.
pub fn h2_norm_squared(sys: &StableSystem) -> Result<f64> {
    let po = solve_lyapunov(&sys.a, &(sys.c.transpose() * &sys.c))?;
    Ok((sys.e.transpose() * po * &sys.e).trace().max(0.0))
}

enum GammaTest {
    /// no imaginary-axis Hamiltonian eigenvalue: `γ` bounds the norm from above
    Above,
    /// a frequency with `σ_max > γ` was found (payload: that σ_max)
    Below(f64),
}

fn hamiltonian_test(sys: &StableSystem, gamma: f64) -> GammaTest {
    let n = sys.a.nrows();
    let mut ham = Mat::zeros(2 * n, 2 * n);
    ham.view_mut((0, 0), (n, n)).copy_from(&sys.a);
    ham.view_mut((0, n), (n, n))
        .copy_from(&(&sys.e * sys.e.transpose() / (gamma * gamma)));
    ham.view_mut((n, 0), (n, n))
        .copy_from(&(-(sys.c.transpose() * &sys.c)));
    ham.view_mut((n, n), (n, n)).copy_from(&(-sys.a.transpose()));
    let tol = 1e-8 * norm2(&ham).max(1.0);
    let mut omegas: Vec<f64> = ham
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.re.abs() <= tol)
        .map(|z| z.im)
        .collect();
    if omegas.is_empty() {
        return GammaTest::Above;
    }
    omegas.sort_by(f64::total_cmp);
    let mut best = 0.0f64;
    for w in omegas.iter() {
        best = best.max(sys.sigma_max(*w));
    }
    for pair in omegas.windows(2) {
        best = best.max(sys.sigma_max(0.5 * (pair[0] + pair[1])));
    }
    if best > gamma {
        GammaTest::Below(best)
    } else {
        // tangential crossing: γ is the peak up to rounding
        GammaTest::Above
    }
}

/// H-infinity norm by bisection on the Hamiltonian imaginary-axis test.
/// The result lies within `rel_tol` (relative) of the true norm.
pub fn hinf_norm(sys: &StableSystem, rel_tol: f64) -> Result<f64> {
    if rel_tol <= 0.0 {
        return Err(Error::InvalidInput("rel_tol must be positive".into()));
    }
    if sys.c.amax() == 0.0 || sys.e.amax() == 0.0 || sys.a.nrows() == 0 {
        return Ok(0.0);
    }
    // lower bound from a handful of frequency evaluations
    let mut probes = vec![0.0];
    for z in crate::linalg::eigenvalues(&sys.a) {
        probes.push(z.im.abs());
        probes.push(z.norm());
    }
    let mut lb = probes.iter().map(|w| sys.sigma_max(*w)).fold(0.0, f64::max);
    if lb == 0.0 {
        let scale = norm2(&sys.a).max(1.0);
        lb = (-40..=40)
            .map(|k| sys.sigma_max(scale * 10f64.powf(k as f64 / 8.0)))
            .fold(0.0, f64::max);
        if lb == 0.0 {
            return Ok(0.0);
        }
    }
    let mut ub = 2.0 * lb;
    let mut doublings = 0;
    while let GammaTest::Below(s) = hamiltonian_test(sys, ub) {
        lb = lb.max(s);
        ub = 2.0 * ub.max(s);
        doublings += 1;
        if doublings > 200 {
            return Err(Error::Numerical("H-infinity upper bound search diverged".into()));
        }
    }
    while ub > lb * (1.0 + rel_tol) {
        let g = (lb * ub).sqrt();
        match hamiltonian_test(sys, g) {
            GammaTest::Above => ub = g,
            GammaTest::Below(s) => lb = lb.max(s).min(ub),
        }
    }
    Ok(0.5 * (lb + ub))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertificateReport {
    /// Largest eigenvalue of the Lyapunov / Riccati-type expression (must be < 0).
    pub residual_lambda_max: f64,
    /// Smallest eigenvalue of `P` (must be > 0).
    pub p_lambda_min: f64,
    /// `tr(E^T P E)` for the H2 check; `NaN` for the H-infinity check.
    pub trace: f64,
    pub gamma: f64,
    pub pass: bool,
}

fn strictness_tol(a: &Mat, c: &Mat, p: &Mat) -> f64 {
    1e-8 * (norm2(a) * norm2(p) + norm2(c).powi(2)).max(f64::MIN_POSITIVE)
}

/// Lyapunov-type H2 certificate: `A^T P + P A + C^T C < 0`, `P > 0`,
/// `tr(E^T P E) < γ`.
pub fn check_h2_certificate(a: &Mat, e: &Mat, c: &Mat, p: &Mat, gamma: f64) -> CertificateReport {
    let expr = a.transpose() * p + p * a + c.transpose() * c;
    let lmax = lambda_max_sym(&expr);
    let pmin = lambda_min_sym(p);
    let trace = (e.transpose() * p * e).trace();
    let tol = strictness_tol(a, c, p);
    CertificateReport {
        residual_lambda_max: lmax,
        p_lambda_min: pmin,
        trace,
        gamma,
        pass: lmax < -tol && pmin > 0.0 && trace < gamma,
    }
}

/// Bounded-real certificate: `A^T P + P A + γ^-2 P E E^T P + C^T C < 0`, `P > 0`.
pub fn check_hinf_certificate(a: &Mat, e: &Mat, c: &Mat, p: &Mat, gamma: f64) -> CertificateReport {
    let pe = p * e;
    let expr = a.transpose() * p + p * a + &pe * pe.transpose() / (gamma * gamma) + c.transpose() * c;
    let lmax = lambda_max_sym(&expr);
    let pmin = lambda_min_sym(p);
    let tol = strictness_tol(a, c, p);
    CertificateReport {
        residual_lambda_max: lmax,
        p_lambda_min: pmin,
        trace: f64::NAN,
        gamma,
        pass: gamma > 0.0 && lmax < -tol && pmin > 0.0,
    }
}

/// Dense Kronecker-product Lyapunov solve, `(I ⊗ A^T + A^T ⊗ I) vec(P) = -vec(Q)`.
/// Only meant for small `n`; used as an independent cross-check.
pub fn solve_lyapunov_kronecker(a: &Mat, q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    let eye = Mat::identity(n, n);
    let at = a.transpose();
    let big = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -DMatrix::from_column_slice(n * n, 1, q.as_slice());
    let sol = big
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("Kronecker system is singular".into()))?;
    Ok(Mat::from_column_slice(n, n, sol.as_slice()))
}

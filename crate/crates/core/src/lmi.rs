//! Feasibility of strict linear matrix inequalities `F(x) ≺ 0` over small
//! block-diagonal affine pencils `F(x) = S0 + Σ x_k S_k`.
//!
//! The solver runs a Polyak-step subgradient descent on `λ_max(F(x))` first
//! and, if that does not reach the requested margin, a log-det barrier
//! Newton method on the phase-one problem `min t  s.t.  F(x) ≺ t I`. Every
//! returned point is re-evaluated before it is handed back.

use nalgebra::{DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{block_diag, is_symmetric, symmetrize, Mat};

#[derive(Debug, Clone, Serialize)]
pub struct PencilBlock {
    pub label: String,
    #[serde(with = "crate::io::mat")]
    pub constant: Mat,
    /// `(variable index, coefficient matrix)`; variables not listed have a zero coefficient.
    pub terms: Vec<(usize, TermMatrix)>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(transparent)]
pub struct TermMatrix(#[serde(with = "crate::io::mat")] pub Mat);

impl PencilBlock {
    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    pub fn eval(&self, x: &DVector<f64>) -> Mat {
        let mut m = self.constant.clone();
        for (k, s) in &self.terms {
            m += &s.0 * x[*k];
        }
        m
    }
}

/// Block-diagonal affine symmetric pencil.
#[derive(Debug, Clone, Serialize)]
pub struct AffinePencil {
    num_vars: usize,
    blocks: Vec<PencilBlock>,
}

impl AffinePencil {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            blocks: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn blocks(&self) -> &[PencilBlock] {
        &self.blocks
    }

    /// Total dimension `m` of the block-diagonal matrix.
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.size()).sum()
    }

    pub fn add_block(
        &mut self,
        label: impl Into<String>,
        constant: Mat,
        terms: Vec<(usize, Mat)>,
    ) -> Result<()> {
        let label = label.into();
        let m = constant.nrows();
        let sym_tol = |s: &Mat| 1e-12 * s.amax().max(1.0);
        if !is_symmetric(&constant, sym_tol(&constant)) {
            return Err(Error::BadPencil(format!("block '{label}': constant term is not symmetric")));
        }
        let mut checked = Vec::with_capacity(terms.len());
        for (k, s) in terms {
            if k >= self.num_vars {
                return Err(Error::BadPencil(format!("block '{label}': variable {k} out of range")));
            }
            if s.shape() != (m, m) || !is_symmetric(&s, sym_tol(&s)) {
                return Err(Error::BadPencil(format!(
                    "block '{label}': term for variable {k} is not a symmetric {m}x{m} matrix"
                )));
            }
            if s.amax() > 0.0 {
                checked.push((k, TermMatrix(symmetrize(&s))));
            }
        }
        self.blocks.push(PencilBlock {
            label,
            constant: symmetrize(&constant),
            terms: checked,
        });
        Ok(())
    }

    /// Adds a block given as an affine function of the variable vector;
    /// coefficients are recovered by evaluating at `0` and the unit vectors.
    pub fn add_affine_block<F>(&mut self, label: impl Into<String>, f: F) -> Result<()>
    where
        F: Fn(&DVector<f64>) -> Mat,
    {
        let k = self.num_vars;
        let zero = DVector::zeros(k);
        let s0 = f(&zero);
        let mut terms = Vec::new();
        for j in 0..k {
            let mut e = zero.clone();
            e[j] = 1.0;
            let sj = f(&e) - &s0;
            if sj.amax() > 0.0 {
                terms.push((j, sj));
            }
        }
        self.add_block(label, s0, terms)
    }

    /// Block-diagonal value `F(x)`.
    pub fn eval_matrix(&self, x: &DVector<f64>) -> Mat {
        let blocks: Vec<Mat> = self.blocks.iter().map(|b| b.eval(x)).collect();
        block_diag(&blocks)
    }

    /// `λ_max(F(x))`, computed block by block.
    pub fn lambda_max(&self, x: &DVector<f64>) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let m = b.eval(x);
                if m.is_empty() {
                    f64::NEG_INFINITY
                } else {
                    m.symmetric_eigenvalues().max()
                }
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn eval(&self, x: &DVector<f64>) -> PencilValue {
        PencilValue {
            matrix: self.eval_matrix(x),
            lambda_max: self.lambda_max(x),
        }
    }

    /// Largest entry over all constant and coefficient matrices.
    pub fn scale(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| {
                std::iter::once(b.constant.amax()).chain(b.terms.iter().map(|(_, s)| s.0.amax()))
            })
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone)]
pub struct PencilValue {
    pub matrix: Mat,
    pub lambda_max: f64,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Required strictness `λ_max(F(x*)) <= -τ`; `None` means `1e-7 × scale`.
    pub tau: Option<f64>,
    /// Margin the solver keeps improving towards once feasible; `None`
    /// means `1e-3 × scale`.
    pub target_margin: Option<f64>,
    /// Iteration budget (subgradient and Newton iterations each).
    pub budget: usize,
    pub seed: u64,
    pub x0: Option<DVector<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tau: None,
            target_margin: None,
            budget: 400,
            seed: 0,
            x0: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: DVector<f64>,
    pub lambda_max: f64,
    pub tau: f64,
    pub iterations: usize,
}

/// Subgradient of `λ_max` at `x`, averaged over the near-degenerate top
/// eigenvectors of the active blocks.
fn subgradient(pencil: &AffinePencil, x: &DVector<f64>, tie_tol: f64) -> (f64, DVector<f64>) {
    let k = pencil.num_vars();
    let eigs: Vec<SymmetricEigen<f64, nalgebra::Dyn>> = pencil
        .blocks
        .iter()
        .map(|b| b.eval(x).symmetric_eigen())
        .collect();
    let fmax = eigs
        .iter()
        .flat_map(|e| e.eigenvalues.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut g = DVector::zeros(k);
    let mut count = 0usize;
    for (b, e) in pencil.blocks.iter().zip(eigs.iter()) {
        for (idx, lam) in e.eigenvalues.iter().enumerate() {
            if *lam >= fmax - tie_tol {
                let u = e.eigenvectors.column(idx);
                for (var, s) in &b.terms {
                    g[*var] += (u.transpose() * &s.0 * u)[(0, 0)];
                }
                count += 1;
            }
        }
    }
    if count > 0 {
        g /= count as f64;
    }
    (fmax, g)
}

struct PhaseOne<'a> {
    pencil: &'a AffinePencil,
    /// Cholesky factors of `tI - F_b(x)` and their inverses, per block.
    inverses: Vec<Mat>,
}

impl<'a> PhaseOne<'a> {
    fn new(pencil: &'a AffinePencil) -> Self {
        Self {
            pencil,
            inverses: Vec::new(),
        }
    }

    /// Barrier value `s t - Σ log det(t I - F_b(x))`, or `None` outside the domain.
    fn value(&mut self, x: &DVector<f64>, t: f64, s: f64) -> Option<f64> {
        let mut val = s * t;
        self.inverses.clear();
        for b in &self.pencil.blocks {
            let m = b.size();
            if m == 0 {
                self.inverses.push(Mat::zeros(0, 0));
                continue;
            }
            let z = Mat::identity(m, m) * t - b.eval(x);
            let chol = symmetrize(&z).cholesky()?;
            let logdet: f64 = chol.l_dirty().diagonal().iter().take(m).map(|d| d.ln()).sum::<f64>() * 2.0;
            val -= logdet;
            self.inverses.push(chol.inverse());
        }
        Some(val)
    }

    /// Gradient and Hessian at the point last passed to `value`.
    fn derivatives(&self, s: f64) -> (DVector<f64>, Mat) {
        let k = self.pencil.num_vars();
        let dim = k + 1;
        let mut grad = DVector::zeros(dim);
        let mut hess = Mat::zeros(dim, dim);
        grad[k] = s;
        for (b, w) in self.pencil.blocks.iter().zip(self.inverses.iter()) {
            if w.is_empty() {
                continue;
            }
            // W S_j for every active term
            let ws: Vec<(usize, Mat)> = b.terms.iter().map(|(j, sj)| (*j, w * &sj.0)).collect();
            for (j, wsj) in &ws {
                grad[*j] += wsj.trace();
            }
            grad[k] -= w.trace();
            for (a_idx, (i, wsi)) in ws.iter().enumerate() {
                for (j, wsj) in ws.iter().skip(a_idx) {
                    let v = wsi.component_mul(&wsj.transpose()).sum();
                    hess[(*i, *j)] += v;
                    if i != j {
                        hess[(*j, *i)] += v;
                    }
                }
                let v = -wsi.component_mul(&w.transpose()).sum();
                hess[(*i, k)] += v;
                hess[(k, *i)] += v;
            }
            hess[(k, k)] += w.component_mul(&w.transpose()).sum();
        }
        (grad, hess)
    }
}

fn newton_direction(grad: &DVector<f64>, hess: &Mat) -> Option<DVector<f64>> {
    let dim = grad.len();
    let reg = 1e-12 * hess.diagonal().amax().max(1e-300);
    let mut h = symmetrize(hess);
    for i in 0..dim {
        h[(i, i)] += reg;
    }
    if let Some(ch) = h.clone().cholesky() {
        return Some(-ch.solve(grad));
    }
    h.lu().solve(grad).map(|d| -d)
}

/// Searches for `x` with `λ_max(F(x)) <= -τ`.
///
/// Failure to find such a point within the budget is reported as
/// [`Error::Infeasible`] carrying the best `λ_max` seen; it does not prove
/// that the LMI is infeasible.
pub fn solve_feasibility(pencil: &AffinePencil, opts: &SolverOptions) -> Result<Solution> {
    let k = pencil.num_vars();
    let scale = pencil.scale().max(f64::MIN_POSITIVE);
    let tau = opts.tau.unwrap_or(1e-7 * scale);
    if tau <= 0.0 {
        return Err(Error::BadPencil("strictness must be positive".into()));
    }
    let goal = opts.target_margin.unwrap_or(1e-3 * scale).max(tau);

    let mut x = match &opts.x0 {
        Some(x0) if x0.len() == k => x0.clone(),
        Some(_) => return Err(Error::BadPencil("initial point has wrong length".into())),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            DVector::from_fn(k, |_, _| 1e-3 * rng.random_range(-1.0..1.0))
        }
    };

    let finish = |x: DVector<f64>, iterations: usize| -> Result<Solution> {
        let lambda_max = pencil.lambda_max(&x);
        if lambda_max <= -tau {
            Ok(Solution {
                x,
                lambda_max,
                tau,
                iterations,
            })
        } else {
            Err(Error::Infeasible {
                best_lambda_max: lambda_max,
            })
        }
    };

    // stage 1: Polyak subgradient steps towards λ_max = -2 goal
    let mut best_x = x.clone();
    let mut best_f = pencil.lambda_max(&x);
    let mut iterations = 0;
    let sub_budget = opts.budget.min(200);
    while iterations < sub_budget && best_f > -goal {
        iterations += 1;
        let (f, g) = subgradient(pencil, &x, 1e-9 * scale);
        let gn = g.norm_squared();
        if gn == 0.0 {
            break;
        }
        let step = (f + 2.0 * goal) / gn;
        x -= g * step;
        let fx = pencil.lambda_max(&x);
        if fx < best_f {
            best_f = fx;
            best_x = x.clone();
        }
    }
    if best_f <= -goal {
        return finish(best_x, iterations);
    }

    // stage 2: barrier method on min t s.t. F(x) < t I
    let mut x = best_x;
    let m_total = pencil.dim() as f64;
    let mut t = best_f + 0.1 * scale.max(best_f.abs());
    let mut s = m_total / scale.max(best_f.abs());
    let mut po = PhaseOne::new(pencil);
    let mut newton_iters = 0;
    let mut best_x = x.clone();
    let mut best_f = pencil.lambda_max(&x);
    'outer: loop {
        // centering
        loop {
            if newton_iters >= opts.budget {
                break 'outer;
            }
            newton_iters += 1;
            let Some(val) = po.value(&x, t, s) else {
                return Err(Error::Numerical("phase-one iterate left the barrier domain".into()));
            };
            let (grad, hess) = po.derivatives(s);
            let Some(dir) = newton_direction(&grad, &hess) else {
                break 'outer;
            };
            let decrement = -grad.dot(&dir);
            if !decrement.is_finite() {
                break 'outer;
            }
            if decrement * 0.5 <= 1e-9 {
                break;
            }
            // damped step with backtracking
            let mut step = if decrement.sqrt() > 0.25 { 1.0 / (1.0 + decrement.sqrt()) } else { 1.0 };
            let mut accepted = false;
            for _ in 0..60 {
                let xn = &x + dir.rows(0, k) * step;
                let tn = t + dir[k] * step;
                if let Some(vn) = po.value(&xn, tn, s) {
                    if vn <= val - 0.25 * step * decrement {
                        x = xn;
                        t = tn;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
            let f = pencil.lambda_max(&x);
            if f < best_f {
                best_f = f;
                best_x = x.clone();
            }
            if best_f <= -goal {
                break 'outer;
            }
        }
        // t* >= t - m/s on the central path
        let gap = m_total / s;
        if t - gap > -tau {
            break;
        }
        if gap <= 1e-10 * scale {
            break;
        }
        s *= 8.0;
    }
    finish(best_x, iterations + newton_iters)
}

/// Bisection for the smallest feasible value of a monotone scalar family:
/// `probe(c)` is assumed to succeed for every `c` above some threshold.
/// Stops when `hi - lo <= rel_width × hi` and returns the last success.
pub fn bisect_feasible<T, F>(mut lo: f64, mut hi: f64, rel_width: f64, mut probe: F) -> Result<(f64, T)>
where
    F: FnMut(f64) -> Result<T>,
{
    let mut best = match probe(hi) {
        Ok(v) => v,
        Err(Error::Infeasible { best_lambda_max }) => return Err(Error::Infeasible { best_lambda_max }),
        Err(e) => return Err(e),
    };
    while hi - lo > rel_width * hi.abs() {
        let mid = 0.5 * (lo + hi);
        match probe(mid) {
            Ok(v) => {
                best = v;
                hi = mid;
            }
            Err(Error::Infeasible { .. }) => lo = mid,
            Err(e) => return Err(e),
        }
    }
    Ok((hi, best))
}

/// Smallest `c` in `[lo, hi]` (to relative width `rel_width`) such that the
/// pencil together with `x_index < c` is feasible.
pub fn minimize_scalar_on_pencil(
    pencil: &AffinePencil,
    index: usize,
    lo: f64,
    hi: f64,
    rel_width: f64,
    opts: &SolverOptions,
) -> Result<(f64, Solution)> {
    if index >= pencil.num_vars() {
        return Err(Error::BadPencil("objective index out of range".into()));
    }
    bisect_feasible(lo, hi, rel_width, |c| {
        let mut p = pencil.clone();
        p.add_block(
            "objective bound",
            Mat::from_element(1, 1, -c),
            vec![(index, Mat::from_element(1, 1, 1.0))],
        )?;
        solve_feasibility(&p, opts)
    })
}

/// Layout helper for symmetric matrix variables stored by their upper
/// triangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymVar {
    pub offset: usize,
    pub dim: usize,
}

impl SymVar {
    pub fn len(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        self.dim == 0
    }

    pub fn assemble(&self, x: &DVector<f64>) -> Mat {
        let mut m = Mat::zeros(self.dim, self.dim);
        let mut k = self.offset;
        for i in 0..self.dim {
            for j in i..self.dim {
                m[(i, j)] = x[k];
                m[(j, i)] = x[k];
                k += 1;
            }
        }
        m
    }

    /// Writes `m` (symmetric) into the variable vector.
    pub fn store(&self, m: &Mat, x: &mut DVector<f64>) {
        let mut k = self.offset;
        for i in 0..self.dim {
            for j in i..self.dim {
                x[k] = 0.5 * (m[(i, j)] + m[(j, i)]);
                k += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> Mat {
        Mat::from_element(1, 1, x)
    }

    /// diag(x - 1, -x)
    fn interval_pencil() -> AffinePencil {
        let mut p = AffinePencil::new(1);
        p.add_block("upper", scalar(-1.0), vec![(0, scalar(1.0))]).unwrap();
        p.add_block("lower", scalar(0.0), vec![(0, scalar(-1.0))]).unwrap();
        p
    }

    #[test]
    fn eval_examples() {
        let mut p = AffinePencil::new(1);
        p.add_block("b", scalar(-2.0), vec![(0, scalar(1.0))]).unwrap();
        assert_eq!(p.lambda_max(&DVector::from_element(1, 0.0)), -2.0);
        assert_eq!(p.lambda_max(&DVector::from_element(1, 3.0)), 1.0);
        let q = interval_pencil();
        let v = q.eval(&DVector::from_element(1, 0.25));
        assert_eq!(v.matrix.shape(), (2, 2));
        assert_eq!(v.lambda_max, -0.25);
    }

    #[test]
    fn interval_is_feasible() {
        let p = interval_pencil();
        let opts = SolverOptions {
            tau: Some(1e-6),
            ..Default::default()
        };
        let sol = solve_feasibility(&p, &opts).unwrap();
        assert!(sol.x[0] > 0.0 && sol.x[0] < 1.0);
        assert!(p.lambda_max(&sol.x) <= -1e-6);
    }

    #[test]
    fn contradictory_signs_are_infeasible() {
        let mut p = AffinePencil::new(1);
        p.add_block("a", scalar(0.0), vec![(0, scalar(1.0))]).unwrap();
        p.add_block("b", scalar(0.0), vec![(0, scalar(-1.0))]).unwrap();
        assert!(matches!(
            solve_feasibility(&p, &SolverOptions::default()),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn asymmetric_terms_rejected() {
        let mut p = AffinePencil::new(1);
        let bad = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(
            p.add_block("x", bad.clone(), vec![]),
            Err(Error::BadPencil(_))
        ));
        assert!(matches!(
            p.add_block("x", Mat::zeros(2, 2), vec![(0, bad)]),
            Err(Error::BadPencil(_))
        ));
        assert!(p.add_block("x", scalar(0.0), vec![(3, scalar(1.0))]).is_err());
    }

    #[test]
    fn minimize_on_interval() {
        let p = interval_pencil();
        let opts = SolverOptions {
            tau: Some(1e-6),
            ..Default::default()
        };
        let (c, sol) = minimize_scalar_on_pencil(&p, 0, 0.0, 1.0, 1e-3, &opts).unwrap();
        assert!(c <= 2e-3, "c = {c}");
        assert!(sol.x[0] < c);
        // an infeasible upper bracket is reported as such
        assert!(matches!(
            minimize_scalar_on_pencil(&p, 0, -1.0, -0.5, 1e-3, &opts),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let p = interval_pencil();
        let opts = SolverOptions {
            seed: 42,
            ..Default::default()
        };
        let a = solve_feasibility(&p, &opts).unwrap();
        let b = solve_feasibility(&p, &opts).unwrap();
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn sym_var_roundtrip() {
        let v = SymVar { offset: 1, dim: 3 };
        let m = Mat::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let mut x = DVector::zeros(1 + v.len());
        v.store(&m, &mut x);
        assert_eq!(v.assemble(&x), m);
        assert_eq!(x[0], 0.0);
    }

    #[test]
    fn affine_block_recovers_terms() {
        let v = SymVar { offset: 0, dim: 2 };
        let a = Mat::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -3.0]);
        let mut p = AffinePencil::new(v.len());
        p.add_affine_block("lyap", |x| {
            let pm = v.assemble(x);
            a.transpose() * &pm + &pm * &a + Mat::identity(2, 2)
        })
        .unwrap();
        let mut x = DVector::zeros(3);
        v.store(&Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]), &mut x);
        let pm = v.assemble(&x);
        let direct = a.transpose() * &pm + &pm * &a + Mat::identity(2, 2);
        assert!((p.eval_matrix(&x) - direct).amax() < 1e-14);
    }
}

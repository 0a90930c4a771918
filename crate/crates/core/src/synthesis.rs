//! Gain synthesis for H2 and H-infinity suboptimal distributed filters.
//!
//! Every path starts from the same per-node data: the detectability
//! decomposition `T_i`, the local Riccati gain `G_i1` on the detectable
//! part, and a margin `ε` with `T^T (𝓛 ⊗ I) T + M > ε I`. The H2 design is
//! then either constructed directly (one Lyapunov solve per node) or found
//! through an LMI over `{P_i1, P_i2, κ}`; the H-infinity design is always
//! an LMI.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::decomp::{detectability_decomposition, DecompositionRecord, NodeDecomposition};
use crate::error::{Error, Result};
use crate::graph::LaplacianData;
use crate::linalg::{block_diag, kron, lambda_max_sym, lambda_min_sym, spd_inverse, symmetrize, vstack, Mat};
use crate::lmi::{bisect_feasible, solve_feasibility, AffinePencil, SolverOptions, SymVar};
use crate::mateq::{solve_filter_riccati, solve_lyapunov};
use crate::plant::{validate_assumptions, OutputPartition, Plant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    H2,
    Hinf,
}

/// How the per-node H-infinity blocks share the common disturbance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HinfCoupling {
    /// One block over all nodes with the stacked column
    /// `col(P_i V_i)` against a single `-γ² I_q`. Sound for any `N`.
    #[default]
    Joint,
    /// Each node carries its own `-γ² I_q` block. This drops the cross terms
    /// `P_i V_i V_j^T P_j / γ²` of the shared disturbance and is only a
    /// certificate when `N = 1`.
    PerNode,
}

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub epsilon_safety: f64,
    pub kappa_margin: f64,
    pub riccati_delta: f64,
    /// Per-node weights `m_i`; `None` means all ones.
    pub m: Option<Vec<f64>>,
    pub solver: SolverOptions,
    /// Relative bracket width at which γ bisection stops.
    pub gamma_rel_width: f64,
    /// Number of doublings allowed when searching an upper γ bracket.
    pub doubling_budget: usize,
    /// Smallest γ considered by the H2 minimization.
    pub gamma_floor: f64,
    pub hinf_coupling: HinfCoupling,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            epsilon_safety: 0.95,
            kappa_margin: 1.05,
            riccati_delta: 0.1,
            m: None,
            solver: SolverOptions::default(),
            gamma_rel_width: 1e-2,
            doubling_budget: 30,
            gamma_floor: 1e-6,
            hinf_coupling: HinfCoupling::Joint,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisCertificate {
    pub mode: Mode,
    pub m: Vec<f64>,
    pub epsilon: f64,
    pub kappa: f64,
    pub delta: Vec<f64>,
    #[serde(with = "crate::io::mat_vec")]
    pub q1: Vec<Mat>,
    #[serde(with = "crate::io::mat_vec")]
    pub g1: Vec<Mat>,
    #[serde(with = "crate::io::mat_vec")]
    pub p1: Vec<Mat>,
    #[serde(with = "crate::io::mat_vec")]
    pub p2: Vec<Mat>,
    /// `tr[(E_i1 - G_i1 D_i)^T P_i1 (E_i1 - G_i1 D_i) + E_i2^T P_i2 E_i2]` per node.
    pub node_traces: Vec<f64>,
    pub gamma: f64,
    pub epsilon_safety: f64,
    pub kappa_margin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hinf_coupling: Option<HinfCoupling>,
}

impl SynthesisCertificate {
    /// `P = blockdiag(T_i diag(P_i1, P_i2) T_i^T)`.
    pub fn global_p(&self, decomps: &[DecompositionRecord]) -> Mat {
        let blocks: Vec<Mat> = decomps
            .iter()
            .zip(self.p1.iter().zip(self.p2.iter()))
            .map(|(d, (p1, p2))| {
                let inner = block_diag(&[p1.clone(), p2.clone()]);
                symmetrize(&(&d.t * inner * d.t.transpose()))
            })
            .collect();
        block_diag(&blocks)
    }

    /// `M = blockdiag(m_i I_{v_i}, 0)`.
    pub fn big_m(&self, decomps: &[DecompositionRecord]) -> Mat {
        let blocks: Vec<Mat> = decomps
            .iter()
            .zip(self.m.iter())
            .map(|(d, &m)| {
                let n = d.t.nrows();
                let mut b = Mat::zeros(n, n);
                for k in 0..d.v {
                    b[(k, k)] = m;
                }
                b
            })
            .collect();
        block_diag(&blocks)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub lmi_tau: Option<f64>,
    pub seed: u64,
}

impl Provenance {
    fn new(opts: &SynthesisOptions) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            lmi_tau: opts.solver.tau,
            seed: opts.solver.seed,
        }
    }
}

/// Per-node filter gains plus, when synthesized here, the certificate and
/// decomposition bases that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterDesign {
    #[serde(rename = "F", with = "crate::io::mat_vec")]
    pub f: Vec<Mat>,
    #[serde(rename = "G", with = "crate::io::mat_vec")]
    pub g: Vec<Mat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<SynthesisCertificate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub decompositions: Vec<DecompositionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl FilterDesign {
    pub fn from_gains(f: Vec<Mat>, g: Vec<Mat>) -> Self {
        Self {
            f,
            g,
            certificate: None,
            decompositions: Vec::new(),
            provenance: None,
        }
    }

    pub fn node_count(&self) -> usize {
        self.f.len()
    }
}

/// `T^T (𝓛 ⊗ I_n) T + M` with `T = blockdiag(T_i)`.
pub fn consensus_margin_matrix(decomps: &[NodeDecomposition], script_l: &Mat, m: &[f64]) -> Mat {
    let n = decomps.first().map_or(0, |d| d.n());
    let t = block_diag(&decomps.iter().map(|d| d.t.clone()).collect::<Vec<_>>());
    let mut out = t.transpose() * kron(script_l, &Mat::identity(n, n)) * &t;
    for (i, d) in decomps.iter().enumerate() {
        for k in 0..d.v {
            out[(i * n + k, i * n + k)] += m[i];
        }
    }
    symmetrize(&out)
}

/// `ε = safety · λ_min(T^T (𝓛 ⊗ I) T + M)`.
pub fn choose_epsilon(decomps: &[NodeDecomposition], script_l: &Mat, m: &[f64], safety: f64) -> Result<f64> {
    if m.len() != decomps.len() || m.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidInput("m_i must be positive, one per node".into()));
    }
    let lambda_min = lambda_min_sym(&consensus_margin_matrix(decomps, script_l, m));
    if !(lambda_min > 0.0) {
        return Err(Error::Lemma4Violated { lambda_min });
    }
    Ok(safety * lambda_min)
}

/// Left-hand side of the κ condition for one node:
/// `A22 + A22^T + H2^T H2 - κε I + (κε)^-1 B B^T`, `B = A21 + H2^T H1`.
pub fn kappa_condition(d: &NodeDecomposition, epsilon: f64, kappa: f64) -> Mat {
    let s = d.s();
    let b = &d.a21 + d.h2.transpose() * &d.h1;
    let ke = kappa * epsilon;
    let m = &d.a22 + d.a22.transpose() + d.h2.transpose() * &d.h2 - Mat::identity(s, s) * ke
        + &b * b.transpose() / ke;
    symmetrize(&m)
}

/// Largest eigenvalue of the κ condition over all nodes (`-inf` if every
/// node is fully detectable).
pub fn kappa_lambda_max(decomps: &[NodeDecomposition], epsilon: f64, kappa: f64) -> f64 {
    decomps
        .iter()
        .filter(|d| d.s() > 0)
        .map(|d| lambda_max_sym(&kappa_condition(d, epsilon, kappa)))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest κ satisfying the κ condition at every node (found by doubling
/// then bisection), multiplied by `margin`. The condition is monotone in κ,
/// so the feasible set is an open half-line.
pub fn choose_kappa_h2(decomps: &[NodeDecomposition], epsilon: f64, margin: f64) -> Result<f64> {
    if decomps.iter().all(|d| d.s() == 0) {
        return Ok(1.0);
    }
    let feasible = |k: f64| kappa_lambda_max(decomps, epsilon, k) < 0.0;
    let mut hi = 1.0;
    let mut doublings = 0;
    while !feasible(hi) {
        hi *= 2.0;
        doublings += 1;
        if doublings > 1100 {
            return Err(Error::Numerical("no feasible kappa found".into()));
        }
    }
    let mut lo = if doublings == 0 { 0.0 } else { hi / 2.0 };
    while hi - lo > 1e-9 * hi {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(margin * hi)
}

/// `G_i1` recovered from a full gain `G_i` as the detectable rows of `T_i^T G_i`.
pub fn extract_g1(d: &NodeDecomposition, g_i: &Mat) -> Mat {
    (d.t.transpose() * g_i).rows(0, d.v).into_owned()
}

/// Everything the synthesis paths share.
struct Prepared {
    theta: DVector<f64>,
    decomps: Vec<NodeDecomposition>,
    d_blocks: Vec<Mat>,
    m: Vec<f64>,
    epsilon: f64,
    q1: Vec<Mat>,
    g1: Vec<Mat>,
}

impl Prepared {
    fn n_nodes(&self) -> usize {
        self.decomps.len()
    }

    /// `E_i1 - G_i1 D_i`
    fn v_mat(&self, i: usize) -> Mat {
        &self.decomps[i].e1 - &self.g1[i] * &self.d_blocks[i]
    }

    fn acl(&self, i: usize) -> Mat {
        &self.decomps[i].a11 - &self.g1[i] * &self.decomps[i].c1
    }

    fn node_trace(&self, i: usize, p1: &Mat, p2: &Mat) -> f64 {
        let v = self.v_mat(i);
        let e2 = &self.decomps[i].e2;
        (v.transpose() * p1 * &v).trace() + (e2.transpose() * p2 * e2).trace()
    }
}

fn decompose(plant: &Plant, partition: &OutputPartition, lap: &LaplacianData) -> Result<Vec<NodeDecomposition>> {
    if partition.node_count() != lap.node_count() {
        return Err(Error::DimensionMismatch(format!(
            "partition has {} nodes, graph has {}",
            partition.node_count(),
            lap.node_count()
        )));
    }
    validate_assumptions(plant, partition)?;
    crate::par::try_collect(crate::par::map(&partition.c_blocks, |ci| {
        detectability_decomposition(ci, &plant.a, &plant.e, &plant.h)
    }))
}

fn riccati_gains(decomps: &[NodeDecomposition], delta: f64) -> Result<(Vec<Mat>, Vec<Mat>)> {
    let sols = crate::par::try_collect(crate::par::map(decomps, |d| {
        if d.v == 0 {
            Ok((Mat::zeros(0, 0), Mat::zeros(0, d.c1.nrows())))
        } else {
            solve_filter_riccati(&d.a11, &d.c1, delta).map(|s| (s.q, s.g))
        }
    }))?;
    Ok(sols.into_iter().unzip())
}

fn prepare(
    plant: &Plant,
    partition: &OutputPartition,
    lap: &LaplacianData,
    m: Vec<f64>,
    opts: &SynthesisOptions,
) -> Result<Prepared> {
    let decomps = decompose(plant, partition, lap)?;
    let epsilon = choose_epsilon(&decomps, &lap.script_l, &m, opts.epsilon_safety)?;
    let (q1, g1) = riccati_gains(&decomps, opts.riccati_delta)?;
    Ok(Prepared {
        theta: lap.theta.clone(),
        decomps,
        d_blocks: partition.d_blocks.clone(),
        m,
        epsilon,
        q1,
        g1,
    })
}

fn default_m(opts: &SynthesisOptions, n_nodes: usize) -> Result<Vec<f64>> {
    match &opts.m {
        None => Ok(vec![1.0; n_nodes]),
        Some(m) if m.len() == n_nodes => Ok(m.clone()),
        Some(m) => Err(Error::DimensionMismatch(format!(
            "{} weights m_i given for {n_nodes} nodes",
            m.len()
        ))),
    }
}

/// `F_i = κ θ_i T_i diag(P_i1^-1, P_i2^-1) T_i^T`, `G_i = T_i [G_i1; 0]`.
fn node_gains(d: &NodeDecomposition, theta_i: f64, kappa: f64, p1: &Mat, p2: &Mat, g1: &Mat) -> Result<(Mat, Mat)> {
    let inner = block_diag(&[spd_inverse(p1)?, spd_inverse(p2)?]);
    let f = symmetrize(&(&d.t * inner * d.t.transpose() * (kappa * theta_i)));
    let g = vstack(&[g1.clone(), Mat::zeros(d.s(), g1.ncols())]);
    Ok((f, &d.t * g))
}

fn assemble(
    prep: &Prepared,
    mode: Mode,
    kappa: f64,
    p1: Vec<Mat>,
    p2: Vec<Mat>,
    gamma: f64,
    opts: &SynthesisOptions,
) -> Result<FilterDesign> {
    let gains = crate::par::try_collect(crate::par::map_range(prep.n_nodes(), |i| {
        node_gains(&prep.decomps[i], prep.theta[i], kappa, &p1[i], &p2[i], &prep.g1[i])
    }))?;
    let (f, g) = gains.into_iter().unzip();
    let node_traces = (0..prep.n_nodes()).map(|i| prep.node_trace(i, &p1[i], &p2[i])).collect();
    Ok(FilterDesign {
        f,
        g,
        certificate: Some(SynthesisCertificate {
            mode,
            m: prep.m.clone(),
            epsilon: prep.epsilon,
            kappa,
            delta: vec![opts.riccati_delta; prep.n_nodes()],
            q1: prep.q1.clone(),
            g1: prep.g1.clone(),
            p1,
            p2,
            node_traces,
            gamma,
            epsilon_safety: opts.epsilon_safety,
            kappa_margin: opts.kappa_margin,
            hinf_coupling: (mode == Mode::Hinf).then_some(opts.hinf_coupling),
        }),
        decompositions: prep.decomps.iter().map(|d| d.record()).collect(),
        provenance: Some(Provenance::new(opts)),
    })
}

/// Constructive step: `P_i1` from the Lyapunov equation
/// `Acl^T P + P Acl + H1^T H1 + κ I = 0`, `P_i2 = I`.
fn constructive_matrices(prep: &Prepared, kappa: f64) -> Result<(Vec<Mat>, Vec<Mat>)> {
    let p1 = crate::par::try_collect(crate::par::map_range(prep.n_nodes(), |i| {
        let d = &prep.decomps[i];
        if d.v == 0 {
            return Ok(Mat::zeros(0, 0));
        }
        let q = d.h1.transpose() * &d.h1 + Mat::identity(d.v, d.v) * kappa;
        solve_lyapunov(&prep.acl(i), &q).map(|p| symmetrize(&p))
    }))?;
    let p2 = prep.decomps.iter().map(|d| Mat::identity(d.s(), d.s())).collect();
    Ok((p1, p2))
}

fn constructive_finish(prep: &Prepared, kappa: f64, opts: &SynthesisOptions) -> Result<(FilterDesign, f64)> {
    let (p1, p2) = constructive_matrices(prep, kappa)?;
    let bound: f64 = (0..prep.n_nodes()).map(|i| prep.node_trace(i, &p1[i], &p2[i])).sum();
    let design = assemble(prep, Mode::H2, kappa, p1, p2, bound, opts)?;
    Ok((design, bound))
}

/// Constructive H2 design. Returns the design and the trace bound
/// `γ_bound`; the filter is H2 γ-suboptimal for every `γ > γ_bound`.
pub fn synth_h2(
    plant: &Plant,
    partition: &OutputPartition,
    lap: &LaplacianData,
    opts: &SynthesisOptions,
) -> Result<(FilterDesign, f64)> {
    let prep = prepare(plant, partition, lap, vec![1.0; lap.node_count()], opts)?;
    let kappa = choose_kappa_h2(&prep.decomps, prep.epsilon, opts.kappa_margin)?;
    constructive_finish(&prep, kappa, opts)
}

/// Runs the constructive H2 steps with externally fixed `ε`, `κ` and local
/// gains `G_i1` (all `m_i = 1`).
pub fn replay_h2(
    plant: &Plant,
    partition: &OutputPartition,
    lap: &LaplacianData,
    epsilon: f64,
    kappa: f64,
    g1: Vec<Mat>,
    opts: &SynthesisOptions,
) -> Result<(FilterDesign, f64)> {
    let decomps = decompose(plant, partition, lap)?;
    if g1.len() != decomps.len() || g1.iter().zip(&decomps).any(|(g, d)| g.nrows() != d.v) {
        return Err(Error::DimensionMismatch("G_i1 must have v_i rows, one per node".into()));
    }
    let prep = Prepared {
        theta: lap.theta.clone(),
        q1: decomps.iter().map(|d| Mat::zeros(d.v, d.v)).collect(),
        decomps,
        d_blocks: partition.d_blocks.clone(),
        m: vec![1.0; lap.node_count()],
        epsilon,
        g1,
    };
    constructive_finish(&prep, kappa, opts)
}

struct Layout {
    kappa: usize,
    p1: Vec<SymVar>,
    p2: Vec<SymVar>,
    len: usize,
}

impl Layout {
    fn new(decomps: &[NodeDecomposition]) -> Self {
        let mut offset = 1;
        let mut p1 = Vec::new();
        let mut p2 = Vec::new();
        for d in decomps {
            let a = SymVar { offset, dim: d.v };
            offset += a.len();
            let b = SymVar { offset, dim: d.s() };
            offset += b.len();
            p1.push(a);
            p2.push(b);
        }
        Self {
            kappa: 0,
            p1,
            p2,
            len: offset,
        }
    }

    fn pack(&self, kappa: f64, p1: &[Mat], p2: &[Mat]) -> DVector<f64> {
        let mut x = DVector::zeros(self.len);
        x[self.kappa] = kappa;
        for (v, p) in self.p1.iter().zip(p1) {
            v.store(p, &mut x);
        }
        for (v, p) in self.p2.iter().zip(p2) {
            v.store(p, &mut x);
        }
        x
    }

    fn unpack(&self, x: &DVector<f64>) -> (f64, Vec<Mat>, Vec<Mat>) {
        (
            x[self.kappa],
            self.p1.iter().map(|v| v.assemble(x)).collect(),
            self.p2.iter().map(|v| v.assemble(x)).collect(),
        )
    }
}

/// The 2x2 performance block shared by the H2 and H-infinity LMIs.
fn performance_block(prep: &Prepared, i: usize, kappa: f64, p1: &Mat, p2: &Mat) -> Mat {
    let d = &prep.decomps[i];
    let (v, s) = (d.v, d.s());
    let acl = prep.acl(i);
    let eps = prep.epsilon;
    let b11 = acl.transpose() * p1 + p1 * &acl + d.h1.transpose() * &d.h1
        + Mat::identity(v, v) * (kappa * (prep.m[i] - eps));
    let b21 = p2 * &d.a21 + d.h2.transpose() * &d.h1;
    let b22 = p2 * &d.a22 + d.a22.transpose() * p2 + d.h2.transpose() * &d.h2 - Mat::identity(s, s) * (kappa * eps);
    let mut w = Mat::zeros(v + s, v + s);
    w.view_mut((0, 0), (v, v)).copy_from(&b11);
    w.view_mut((v, 0), (s, v)).copy_from(&b21);
    w.view_mut((0, v), (v, s)).copy_from(&b21.transpose());
    w.view_mut((v, v), (s, s)).copy_from(&b22);
    w
}

/// `[P_i1 (E_i1 - G_i1 D_i); P_i2 E_i2]`
fn disturbance_column(prep: &Prepared, i: usize, p1: &Mat, p2: &Mat) -> Mat {
    vstack(&[p1 * prep.v_mat(i), p2 * &prep.decomps[i].e2])
}

fn add_positivity(pencil: &mut AffinePencil, layout: &Layout) -> Result<()> {
    let k = layout.kappa;
    pencil.add_affine_block("kappa > 0", |x| Mat::from_element(1, 1, -x[k]))?;
    for (i, (v1, v2)) in layout.p1.iter().zip(&layout.p2).enumerate() {
        let (v1, v2) = (*v1, *v2);
        if !v1.is_empty() {
            pencil.add_affine_block(format!("node {} P1 > 0", i + 1), move |x| -v1.assemble(x))?;
        }
        if !v2.is_empty() {
            pencil.add_affine_block(format!("node {} P2 > 0", i + 1), move |x| -v2.assemble(x))?;
        }
    }
    Ok(())
}

fn h2_pencil(prep: &Prepared, layout: &Layout, gamma: f64) -> Result<AffinePencil> {
    let mut pencil = AffinePencil::new(layout.len);
    for i in 0..prep.n_nodes() {
        pencil.add_affine_block(format!("node {} performance", i + 1), |x| {
            performance_block(prep, i, x[layout.kappa], &layout.p1[i].assemble(x), &layout.p2[i].assemble(x))
        })?;
    }
    add_positivity(&mut pencil, layout)?;
    pencil.add_affine_block("trace budget", |x| {
        let total: f64 = (0..prep.n_nodes())
            .map(|i| prep.node_trace(i, &layout.p1[i].assemble(x), &layout.p2[i].assemble(x)))
            .sum();
        Mat::from_element(1, 1, total - gamma)
    })?;
    Ok(pencil)
}

/// `[[W, B], [B^T, -γ² I]]`
fn bounded_real_block(w: &Mat, b: &Mat, gamma: f64) -> Mat {
    let (m, q) = (w.nrows(), b.ncols());
    let mut out = Mat::zeros(m + q, m + q);
    out.view_mut((0, 0), (m, m)).copy_from(w);
    out.view_mut((0, m), (m, q)).copy_from(b);
    out.view_mut((m, 0), (q, m)).copy_from(&b.transpose());
    out.view_mut((m, m), (q, q)).copy_from(&(-Mat::identity(q, q) * (gamma * gamma)));
    out
}

fn hinf_pencil(prep: &Prepared, layout: &Layout, gamma: f64, coupling: HinfCoupling) -> Result<AffinePencil> {
    let mut pencil = AffinePencil::new(layout.len);
    let node_blocks = |x: &DVector<f64>, i: usize| {
        let (p1, p2) = (layout.p1[i].assemble(x), layout.p2[i].assemble(x));
        (performance_block(prep, i, x[layout.kappa], &p1, &p2), disturbance_column(prep, i, &p1, &p2))
    };
    match coupling {
        HinfCoupling::Joint => {
            pencil.add_affine_block("joint performance", |x| {
                let (w, b): (Vec<Mat>, Vec<Mat>) = (0..prep.n_nodes()).map(|i| node_blocks(x, i)).unzip();
                bounded_real_block(&block_diag(&w), &vstack(&b), gamma)
            })?;
        }
        HinfCoupling::PerNode => {
            for i in 0..prep.n_nodes() {
                pencil.add_affine_block(format!("node {} performance", i + 1), |x| {
                    let (w, b) = node_blocks(x, i);
                    bounded_real_block(&w, &b, gamma)
                })?;
            }
        }
    }
    add_positivity(&mut pencil, layout)?;
    Ok(pencil)
}

/// Solver options with the constructive design as the initial point.
fn warm_start(prep: &Prepared, layout: &Layout, opts: &SynthesisOptions) -> Result<SolverOptions> {
    let kappa = choose_kappa_h2(&prep.decomps, prep.epsilon, opts.kappa_margin)?;
    let (p1, p2) = constructive_matrices(prep, kappa)?;
    Ok(SolverOptions {
        x0: Some(layout.pack(kappa, &p1, &p2)),
        ..opts.solver.clone()
    })
}

fn solve_mode(prep: &Prepared, mode: Mode, gamma: f64, opts: &SynthesisOptions) -> Result<FilterDesign> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidInput("gamma must be positive and finite".into()));
    }
    let layout = Layout::new(&prep.decomps);
    let pencil = match mode {
        Mode::H2 => h2_pencil(prep, &layout, gamma)?,
        Mode::Hinf => hinf_pencil(prep, &layout, gamma, opts.hinf_coupling)?,
    };
    let solver = warm_start(prep, &layout, opts)?;
    let sol = solve_feasibility(&pencil, &solver)?;
    let (kappa, p1, p2) = layout.unpack(&sol.x);
    assemble(prep, mode, kappa, p1, p2, gamma, opts)
}

/// H2 design at a given `γ` through the LMI over `{P_i1, P_i2, κ}`.
pub fn synth_h2_lmi(
    plant: &Plant,
    partition: &OutputPartition,
    lap: &LaplacianData,
    gamma: f64,
    opts: &SynthesisOptions,
) -> Result<FilterDesign> {
    let prep = prepare(plant, partition, lap, default_m(opts, lap.node_count())?, opts)?;
    solve_mode(&prep, Mode::H2, gamma, opts)
}

/// H-infinity design at a given `γ`: one LMI over all nodes with a shared
/// `κ`, coupled as selected by `opts.hinf_coupling`.
pub fn synth_hinf(
    plant: &Plant,
    partition: &OutputPartition,
    lap: &LaplacianData,
    gamma: f64,
    opts: &SynthesisOptions,
) -> Result<FilterDesign> {
    let prep = prepare(plant, partition, lap, default_m(opts, lap.node_count())?, opts)?;
    solve_mode(&prep, Mode::Hinf, gamma, opts)
}

fn hinf_bracket_prepared(prep: &Prepared, opts: &SynthesisOptions) -> Result<f64> {
    let kappa = choose_kappa_h2(&prep.decomps, prep.epsilon, opts.kappa_margin)?;
    let (p1, p2) = constructive_matrices(prep, kappa)?;
    // γ² must exceed λ_max(B^T (-W)^-1 B), per node or summed over nodes
    let q = prep.decomps.first().map_or(0, |d| d.e2.ncols());
    let mut worst: f64 = 0.0;
    let mut joint = Mat::zeros(q, q);
    for i in 0..prep.n_nodes() {
        let w = performance_block(prep, i, kappa, &p1[i], &p2[i]);
        if w.is_empty() {
            continue;
        }
        let neg = -symmetrize(&w);
        let neg_inv = spd_inverse(&neg).map_err(|_| {
            Error::Numerical(format!("constructive certificate is not strict at node {}", i + 1))
        })?;
        let b = disturbance_column(prep, i, &p1[i], &p2[i]);
        if q > 0 {
            let term = b.transpose() * neg_inv * &b;
            worst = worst.max(lambda_max_sym(&term));
            joint += term;
        }
    }
    let level = match opts.hinf_coupling {
        HinfCoupling::Joint if q > 0 => lambda_max_sym(&symmetrize(&joint)),
        HinfCoupling::Joint => 0.0,
        HinfCoupling::PerNode => worst,
    };
    Ok(level.max(0.0).sqrt())
}

/// H-infinity level certified by the constructive H2 certificate: the
/// H-infinity LMI is feasible at that certificate for every `γ` above the
/// returned value.
pub fn hinf_bracket(
    plant: &Plant,
    partition: &OutputPartition,
    lap: &LaplacianData,
    opts: &SynthesisOptions,
) -> Result<f64> {
    let prep = prepare(plant, partition, lap, default_m(opts, lap.node_count())?, opts)?;
    hinf_bracket_prepared(&prep, opts)
}

/// Smallest `γ` (to relative width `opts.gamma_rel_width`) for which the
/// LMI path of `mode` is feasible, with the corresponding design. Assumes
/// feasibility is monotone in `γ`.
pub fn minimize_gamma(
    plant: &Plant,
    partition: &OutputPartition,
    lap: &LaplacianData,
    mode: Mode,
    opts: &SynthesisOptions,
) -> Result<(f64, FilterDesign)> {
    let m = match mode {
        Mode::H2 => vec![1.0; lap.node_count()],
        Mode::Hinf => default_m(opts, lap.node_count())?,
    };
    let prep = prepare(plant, partition, lap, m, opts)?;
    let probe = |g: f64| solve_mode(&prep, mode, g, opts);
    let floor = opts.gamma_floor;
    let mut hi = match mode {
        Mode::H2 => {
            let kappa = choose_kappa_h2(&prep.decomps, prep.epsilon, opts.kappa_margin)?;
            let (p1, p2) = constructive_matrices(&prep, kappa)?;
            let bound: f64 = (0..prep.n_nodes()).map(|i| prep.node_trace(i, &p1[i], &p2[i])).sum();
            (2.0 * bound).max(floor)
        }
        Mode::Hinf => hinf_bracket_prepared(&prep, opts).unwrap_or(1.0).max(floor),
    };
    let mut attempts = 0;
    let mut first = probe(hi);
    while let Err(Error::Infeasible { .. }) = first {
        attempts += 1;
        if attempts > opts.doubling_budget {
            return first.map(|d| (hi, d));
        }
        hi *= 2.0;
        first = probe(hi);
    }
    let first = first?;
    if hi <= floor {
        return Ok((hi, first));
    }
    let lo = if attempts == 0 { floor } else { hi / 2.0 };
    let (gamma, design) = bisect_feasible(lo, hi, opts.gamma_rel_width, probe)?;
    Ok((gamma, design))
}

/// Per-node budget check: node `i` passes iff its trace term is below `γ/N`.
pub fn local_budget_check(cert: &SynthesisCertificate, gamma: f64) -> Vec<bool> {
    let n = cert.node_traces.len() as f64;
    cert.node_traces.iter().map(|&t| t < gamma / n).collect()
}

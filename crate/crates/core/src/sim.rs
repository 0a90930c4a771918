//! Fixed-step RK4 simulation of the plant together with the network of
//! local filters
//!
//! ```text
//! w_i' = A w_i + G_i (y_i - C_i w_i) + F_i Σ_j a_ij (w_j - w_i)
//! ```

use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::LaplacianData;
use crate::linalg::{kron, Mat};
use crate::plant::{OutputPartition, Plant};
use crate::synthesis::FilterDesign;

/// States larger than this in absolute value abort the run.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Disturbance {
    Zero,
    /// `d(t) = value`
    Constant { value: Vec<f64> },
    /// `d_k(t) = amp sin(freq t)` on every channel.
    Sinusoid { amp: f64, freq: f64 },
    /// Independent uniform draws in `[-amp, amp]`, held for `hold` seconds.
    Noise { amp: f64, hold: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub x0: Vec<f64>,
    /// Stacked initial filter states; `None` starts every filter at zero.
    #[serde(default)]
    pub w0: Option<Vec<f64>>,
    pub disturbance: Disturbance,
    pub horizon: f64,
    pub dt: f64,
    /// Keep every `stride`-th step (the final time is always kept).
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_stride() -> usize {
    1
}

impl SimConfig {
    pub fn new(x0: Vec<f64>, horizon: f64, dt: f64) -> Self {
        Self {
            x0,
            w0: None,
            disturbance: Disturbance::Zero,
            horizon,
            dt,
            stride: 1,
        }
    }

    fn validate(&self, n: usize, n_nodes: usize, q: usize) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidInput("horizon must be positive".into()));
        }
        if !(self.dt > 0.0) || self.dt > self.horizon {
            return Err(Error::InvalidInput("dt must satisfy 0 < dt <= horizon".into()));
        }
        if self.stride == 0 {
            return Err(Error::InvalidInput("stride must be positive".into()));
        }
        if self.x0.len() != n {
            return Err(Error::DimensionMismatch(format!("x0 has {} entries, expected {n}", self.x0.len())));
        }
        if let Some(w0) = &self.w0 {
            if w0.len() != n * n_nodes {
                return Err(Error::DimensionMismatch(format!(
                    "w0 has {} entries, expected {}",
                    w0.len(),
                    n * n_nodes
                )));
            }
        }
        match &self.disturbance {
            Disturbance::Constant { value } if value.len() != q => Err(Error::DimensionMismatch(format!(
                "constant disturbance has {} entries, expected {q}",
                value.len()
            ))),
            Disturbance::Noise { hold, .. } if !(*hold > 0.0) => {
                Err(Error::InvalidInput("noise hold time must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Disturbance as a function of time, with noise values drawn up front.
struct Signal {
    q: usize,
    kind: Disturbance,
    held: Vec<DVector<f64>>,
}

impl Signal {
    fn new(kind: &Disturbance, q: usize, horizon: f64) -> Self {
        let held = match kind {
            Disturbance::Noise { amp, hold, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let count = (horizon / hold).ceil() as usize + 2;
                (0..count)
                    .map(|_| DVector::from_fn(q, |_, _| amp * rng.random_range(-1.0..=1.0)))
                    .collect()
            }
            _ => Vec::new(),
        };
        Self {
            q,
            kind: kind.clone(),
            held,
        }
    }

    fn at(&self, t: f64) -> DVector<f64> {
        match &self.kind {
            Disturbance::Zero => DVector::zeros(self.q),
            Disturbance::Constant { value } => DVector::from_column_slice(value),
            Disturbance::Sinusoid { amp, freq } => DVector::from_element(self.q, amp * (freq * t).sin()),
            Disturbance::Noise { hold, .. } => {
                let k = ((t / hold).floor().max(0.0) as usize).min(self.held.len() - 1);
                self.held[k].clone()
            }
        }
    }
}

/// Joint linear dynamics `ż = A z + B d` with `z = (x, w_1, ..., w_N)`.
#[derive(Debug, Clone)]
pub struct JointSystem {
    pub a: Mat,
    pub b: Mat,
    pub n: usize,
    pub n_nodes: usize,
}

pub fn joint_system(
    plant: &Plant,
    partition: &OutputPartition,
    lap: &LaplacianData,
    design: &FilterDesign,
) -> Result<JointSystem> {
    let n = plant.n();
    let nn = lap.node_count();
    if partition.node_count() != nn || design.f.len() != nn || design.g.len() != nn {
        return Err(Error::DimensionMismatch("graph, partition and design disagree on N".into()));
    }
    for i in 0..nn {
        if design.f[i].shape() != (n, n) || design.g[i].shape() != (n, partition.sizes[i]) {
            return Err(Error::DimensionMismatch(format!("gains of node {} have wrong shape", i + 1)));
        }
    }
    let dim = n * (nn + 1);
    let mut a = Mat::zeros(dim, dim);
    let mut b = Mat::zeros(dim, plant.q());
    a.view_mut((0, 0), (n, n)).copy_from(&plant.a);
    b.view_mut((0, 0), (n, plant.q())).copy_from(&plant.e);
    let coupling = kron(&lap.l, &Mat::identity(n, n));
    for i in 0..nn {
        let (g, c, d) = (&design.g[i], &partition.c_blocks[i], &partition.d_blocks[i]);
        let r = n * (i + 1);
        let gc = g * c;
        a.view_mut((r, 0), (n, n)).copy_from(&gc);
        let diag = &plant.a - &gc;
        let mut row = -&design.f[i] * coupling.rows(n * i, n);
        let mut block = row.view_mut((0, n * i), (n, n));
        block += &diag;
        a.view_mut((r, n), (n, n * nn)).copy_from(&row);
        b.view_mut((r, 0), (n, plant.q())).copy_from(&(g * d));
    }
    Ok(JointSystem { a, b, n, n_nodes: nn })
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub n: usize,
    pub n_nodes: usize,
    pub h: Mat,
    pub times: Vec<f64>,
    /// Joint states `(x, w_1, ..., w_N)` at each sample.
    pub states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn x(&self, k: usize) -> DVector<f64> {
        self.states[k].rows(0, self.n).into_owned()
    }

    pub fn w(&self, k: usize, i: usize) -> DVector<f64> {
        self.states[k].rows(self.n * (i + 1), self.n).into_owned()
    }

    /// `e_i = x - w_i`
    pub fn e(&self, k: usize, i: usize) -> DVector<f64> {
        self.x(k) - self.w(k, i)
    }

    /// `ζ_i = H w_i`
    pub fn zeta(&self, k: usize, i: usize) -> DVector<f64> {
        &self.h * self.w(k, i)
    }

    pub fn z(&self, k: usize) -> DVector<f64> {
        &self.h * self.x(k)
    }

    /// `max_i ‖e_i‖` at sample `k`.
    pub fn max_error_norm(&self, k: usize) -> f64 {
        (0..self.n_nodes).map(|i| self.e(k, i).norm()).fold(0.0, f64::max)
    }

    pub fn header(&self) -> Vec<String> {
        let n = self.n;
        let p = self.h.nrows();
        let mut h = vec!["t".to_string()];
        h.extend((1..=n).map(|j| format!("x{j}")));
        for i in 1..=self.n_nodes {
            h.extend((1..=n).map(|j| format!("w{i}_{j}")));
        }
        for i in 1..=self.n_nodes {
            h.extend((1..=n).map(|j| format!("e{i}_{j}")));
        }
        for i in 1..=self.n_nodes {
            h.extend((1..=p).map(|j| format!("zeta{i}_{j}")));
        }
        h.extend((1..=p).map(|j| format!("z{j}")));
        h
    }

    pub fn row(&self, k: usize) -> Vec<f64> {
        let mut r = vec![self.times[k]];
        r.extend(self.x(k).iter());
        for i in 0..self.n_nodes {
            r.extend(self.w(k, i).iter());
        }
        for i in 0..self.n_nodes {
            r.extend(self.e(k, i).iter());
        }
        for i in 0..self.n_nodes {
            r.extend(self.zeta(k, i).iter());
        }
        r.extend(self.z(k).iter());
        r
    }
}

fn rk4_step(sys: &JointSystem, signal: &Signal, t: f64, z: &DVector<f64>, h: f64) -> DVector<f64> {
    let f = |t: f64, z: &DVector<f64>| &sys.a * z + &sys.b * signal.at(t);
    let k1 = f(t, z);
    let k2 = f(t + 0.5 * h, &(z + &k1 * (0.5 * h)));
    let k3 = f(t + 0.5 * h, &(z + &k2 * (0.5 * h)));
    let k4 = f(t + h, &(z + &k3 * h));
    z + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

pub fn simulate(
    plant: &Plant,
    partition: &OutputPartition,
    lap: &LaplacianData,
    design: &FilterDesign,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    let n = plant.n();
    let nn = lap.node_count();
    cfg.validate(n, nn, plant.q())?;
    let sys = joint_system(plant, partition, lap, design)?;
    let signal = Signal::new(&cfg.disturbance, plant.q(), cfg.horizon);

    let mut z = DVector::zeros(n * (nn + 1));
    z.rows_mut(0, n).copy_from_slice(&cfg.x0);
    if let Some(w0) = &cfg.w0 {
        z.rows_mut(n, n * nn).copy_from_slice(w0);
    }

    let steps = ((cfg.horizon / cfg.dt) - 1e-9).ceil().max(1.0) as usize;
    let mut times = vec![0.0];
    let mut states = vec![z.clone()];
    let mut t = 0.0;
    for k in 1..=steps {
        let t_next = if k == steps { cfg.horizon } else { k as f64 * cfg.dt };
        z = rk4_step(&sys, &signal, t, &z, t_next - t);
        t = t_next;
        if z.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(Error::NonFinite { t });
        }
        if k % cfg.stride == 0 || k == steps {
            times.push(t);
            states.push(z.clone());
        }
    }
    Ok(Trajectory {
        n,
        n_nodes: nn,
        h: plant.h.clone(),
        times,
        states,
    })
}

/// Writes the trajectory as CSV with 17 significant digits per value.
pub fn export_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    if traj.is_empty() {
        return Err(Error::InvalidInput("empty trajectory".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(traj.header())?;
    for k in 0..traj.len() {
        w.write_record(traj.row(k).iter().map(|v| format!("{v:.16e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Path of the configuration sidecar written next to a CSV file.
pub fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    let mut s = csv_path.as_os_str().to_owned();
    s.push(".sim.json");
    s.into()
}

pub fn write_sidecar(csv_path: &Path, cfg: &SimConfig) -> Result<()> {
    crate::io::write_json(&sidecar_path(csv_path), cfg)
}

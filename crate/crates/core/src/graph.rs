//! Weighted communication digraphs and their Laplacian data.
//!
//! Edge convention: an edge `from -> to` with weight `w` means node `to`
//! receives the state of node `from`, i.e. `adjacency[(to, from)] = w`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::linalg::{norm_inf, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// On-disk graph document; node indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    #[serde(rename = "N")]
    pub n: usize,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    adjacency: Mat,
}

impl CommGraph {
    pub fn from_adjacency(adjacency: Mat) -> Result<Self> {
        if !adjacency.is_square() || adjacency.nrows() == 0 {
            return Err(Error::InvalidInput(
                "adjacency must be a non-empty square matrix".into(),
            ));
        }
        for i in 0..adjacency.nrows() {
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::InvalidInput(format!("self-loop at node {}", i + 1)));
            }
        }
        if adjacency.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput(
                "edge weights must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { adjacency })
    }

    pub fn from_edges(n: usize, edges: &[Edge]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("graph needs at least one node".into()));
        }
        let mut adj = Mat::zeros(n, n);
        for e in edges {
            if e.from == 0 || e.to == 0 || e.from > n || e.to > n {
                return Err(Error::InvalidInput(format!(
                    "edge {} -> {} out of range 1..={n}",
                    e.from, e.to
                )));
            }
            let (i, j) = (e.to - 1, e.from - 1);
            if adj[(i, j)] != 0.0 {
                return Err(Error::InvalidInput(format!(
                    "duplicate edge {} -> {}",
                    e.from, e.to
                )));
            }
            adj[(i, j)] = e.weight;
        }
        Self::from_adjacency(adj)
    }

    pub fn from_file(file: &GraphFile) -> Result<Self> {
        Self::from_edges(file.n, &file.edges)
    }

    pub fn to_file(&self) -> GraphFile {
        let n = self.node_count();
        let mut edges = Vec::new();
        for to in 0..n {
            for from in 0..n {
                let w = self.adjacency[(to, from)];
                if w != 0.0 {
                    edges.push(Edge {
                        from: from + 1,
                        to: to + 1,
                        weight: w,
                    });
                }
            }
        }
        GraphFile { n, edges }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &Mat {
        &self.adjacency
    }

    /// `L = D - A` with `D` the diagonal of row sums.
    pub fn laplacian(&self) -> Mat {
        let n = self.node_count();
        let mut l = -self.adjacency.clone();
        for i in 0..n {
            l[(i, i)] = self.adjacency.row(i).sum();
        }
        l
    }

    /// Structural test on the positive-weight edge set.
    pub fn is_strongly_connected(&self) -> bool {
        let n = self.node_count();
        // every node reachable from node 0 along edges, and along reversed edges
        let reach = |forward: bool| {
            let mut seen = vec![false; n];
            let mut queue = VecDeque::from([0usize]);
            seen[0] = true;
            while let Some(u) = queue.pop_front() {
                for (v, seen_v) in seen.iter_mut().enumerate() {
                    // edge u -> v exists iff adjacency[(v, u)] > 0
                    let w = if forward {
                        self.adjacency[(v, u)]
                    } else {
                        self.adjacency[(u, v)]
                    };
                    if w > 0.0 && !*seen_v {
                        *seen_v = true;
                        queue.push_back(v);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }
}

/// Positive left null vector of a Laplacian, normalized so its entries sum to N.
pub fn left_eigenvector(l: &Mat) -> Result<DVector<f64>> {
    let n = l.nrows();
    if !l.is_square() || n == 0 {
        return Err(Error::DimensionMismatch("Laplacian must be square".into()));
    }
    if n == 1 {
        return Ok(DVector::from_element(1, 1.0));
    }
    let scale = norm_inf(l);
    if scale == 0.0 {
        return Err(Error::NotStronglyConnected);
    }
    let svd = l.clone().svd(true, false);
    let mut sv: Vec<(usize, f64)> = svd.singular_values.iter().copied().enumerate().collect();
    sv.sort_by(|a, b| a.1.total_cmp(&b.1));
    // simple zero eigenvalue: second smallest singular value bounded away from 0
    if sv[1].1 <= 1e-8 * scale {
        return Err(Error::NotStronglyConnected);
    }
    let u = svd.u.expect("u requested");
    let mut theta: DVector<f64> = u.column(sv[0].0).into_owned();
    if theta.sum() < 0.0 {
        theta = -theta;
    }
    if theta.iter().any(|t| *t <= 0.0) {
        return Err(Error::NotStronglyConnected);
    }
    theta *= n as f64 / theta.sum();

    // one refinement pass on the bordered system [L^T; 1^T] theta = [0; N]
    let mut bordered = Mat::zeros(n + 1, n);
    bordered.view_mut((0, 0), (n, n)).copy_from(&l.transpose());
    bordered.row_mut(n).fill(1.0);
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = n as f64;
    let residual = &rhs - &bordered * &theta;
    if let Ok(delta) = bordered.svd(true, true).solve(&residual, f64::EPSILON) {
        theta += delta;
    }

    let res = (theta.transpose() * l).amax();
    if res > 1e-9 * scale || theta.iter().any(|t| *t <= 0.0) {
        return Err(Error::NotStronglyConnected);
    }
    Ok(theta)
}

/// `Theta L + L^T Theta`.
pub fn balanced_laplacian(l: &Mat, theta: &DVector<f64>) -> Mat {
    let big_theta = Mat::from_diagonal(theta);
    let s = &big_theta * l + l.transpose() * &big_theta;
    (&s + s.transpose()) * 0.5
}

#[derive(Debug, Clone)]
pub struct LaplacianData {
    pub l: Mat,
    pub theta: DVector<f64>,
    pub big_theta: Mat,
    pub script_l: Mat,
}

impl LaplacianData {
    pub fn new(graph: &CommGraph) -> Result<Self> {
        if !graph.is_strongly_connected() {
            return Err(Error::NotStronglyConnected);
        }
        let l = graph.laplacian();
        let theta = left_eigenvector(&l)?;
        let script_l = balanced_laplacian(&l, &theta);
        Ok(Self {
            big_theta: Mat::from_diagonal(&theta),
            l,
            theta,
            script_l,
        })
    }

    pub fn node_count(&self) -> usize {
        self.l.nrows()
    }
}

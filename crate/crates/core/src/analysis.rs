//! Global error system of a distributed filter and its exact H2 /
//! H-infinity performance check.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::LaplacianData;
use crate::linalg::{block_diag, kron, spectral_abscissa, vstack, Mat};
use crate::mateq::{h2_norm_squared, hinf_norm, is_hurwitz, StableSystem};
use crate::plant::{OutputPartition, Plant};
use crate::synthesis::FilterDesign;

/// Relative accuracy requested from the H-infinity norm routine.
pub const HINF_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct GlobalErrorSystem {
    /// `Ā - F̄ (L ⊗ I_n)`
    pub a_cl: Mat,
    /// `col(E - G_i D_i)`
    pub e: Mat,
    /// `I_N ⊗ H`
    pub c: Mat,
}

impl GlobalErrorSystem {
    pub fn state_dim(&self) -> usize {
        self.a_cl.nrows()
    }
}

pub fn build_global_error_system(
    plant: &Plant,
    partition: &OutputPartition,
    lap: &LaplacianData,
    design: &FilterDesign,
) -> Result<GlobalErrorSystem> {
    let n_nodes = lap.node_count();
    let n = plant.n();
    if partition.node_count() != n_nodes || design.f.len() != n_nodes || design.g.len() != n_nodes {
        return Err(Error::DimensionMismatch(format!(
            "graph has {n_nodes} nodes; partition has {}, design has {} F and {} G blocks",
            partition.node_count(),
            design.f.len(),
            design.g.len()
        )));
    }
    for i in 0..n_nodes {
        let ri = partition.sizes[i];
        if design.f[i].shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!("F_{} must be {n}x{n}", i + 1)));
        }
        if design.g[i].shape() != (n, ri) {
            return Err(Error::DimensionMismatch(format!("G_{} must be {n}x{ri}", i + 1)));
        }
    }
    let a_bar: Vec<Mat> = (0..n_nodes)
        .map(|i| &plant.a - &design.g[i] * &partition.c_blocks[i])
        .collect();
    let f_bar = block_diag(&design.f);
    let a_cl = block_diag(&a_bar) - f_bar * kron(&lap.l, &Mat::identity(n, n));
    let e: Vec<Mat> = (0..n_nodes)
        .map(|i| &plant.e - &design.g[i] * &partition.d_blocks[i])
        .collect();
    Ok(GlobalErrorSystem {
        a_cl,
        e: vstack(&e),
        c: kron(&Mat::identity(n_nodes, n_nodes), &plant.h),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerformanceReport {
    pub hurwitz: bool,
    pub spectral_abscissa: f64,
    /// H2 cost `J`, present for H2 checks on a Hurwitz system.
    #[serde(rename = "J")]
    pub j: Option<f64>,
    /// H-infinity norm, present for H-infinity checks on a Hurwitz system.
    pub hinf: Option<f64>,
    pub gamma: f64,
    pub pass: bool,
}

impl PerformanceReport {
    /// `γ - metric`, when the metric is available.
    pub fn margin(&self) -> Option<f64> {
        self.j.or(self.hinf).map(|m| self.gamma - m)
    }
}

fn stable(sys: &GlobalErrorSystem) -> Option<StableSystem> {
    if !is_hurwitz(&sys.a_cl) {
        return None;
    }
    StableSystem::new(sys.a_cl.clone(), sys.e.clone(), sys.c.clone()).ok()
}

/// Checks H2 γ-suboptimality: Hurwitz error dynamics and `J < γ`.
pub fn verify_h2(sys: &GlobalErrorSystem, gamma: f64) -> Result<PerformanceReport> {
    let abscissa = spectral_abscissa(&sys.a_cl);
    let (hurwitz, j) = match stable(sys) {
        Some(s) => (true, Some(h2_norm_squared(&s)?)),
        None => (false, None),
    };
    Ok(PerformanceReport {
        hurwitz,
        spectral_abscissa: abscissa,
        j,
        hinf: None,
        gamma,
        pass: hurwitz && j.is_some_and(|j| j < gamma),
    })
}

/// Checks H-infinity γ-suboptimality: Hurwitz error dynamics and `‖T_d‖∞ < γ`.
pub fn verify_hinf(sys: &GlobalErrorSystem, gamma: f64) -> Result<PerformanceReport> {
    let abscissa = spectral_abscissa(&sys.a_cl);
    let (hurwitz, norm) = match stable(sys) {
        Some(s) => (true, Some(hinf_norm(&s, HINF_REL_TOL)?)),
        None => (false, None),
    };
    Ok(PerformanceReport {
        hurwitz,
        spectral_abscissa: abscissa,
        j: None,
        hinf: norm,
        gamma,
        pass: hurwitz && norm.is_some_and(|h| h < gamma),
    })
}

//! The monitored LTI plant
//!
//! ```text
//! x' = A x + E d,   y = C x + D d,   z = H x
//! ```
//!
//! and the split of its measured output across the network nodes.

use serde::{Deserialize, Serialize};

use crate::decomp::undetectable_subspace;
use crate::error::{Error, Result};
use crate::linalg::{vstack, Mat};

#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub a: Mat,
    pub c: Mat,
    pub d: Mat,
    pub e: Mat,
    pub h: Mat,
}

impl Plant {
    pub fn new(a: Mat, c: Mat, d: Mat, e: Mat, h: Mat) -> Result<Self> {
        let n = a.nrows();
        let dims = |what: &str, m: &Mat, rows: usize, cols: usize| {
            if m.shape() != (rows, cols) {
                Err(Error::DimensionMismatch(format!(
                    "{what} is {}x{}, expected {rows}x{cols}",
                    m.nrows(),
                    m.ncols()
                )))
            } else {
                Ok(())
            }
        };
        if n == 0 || !a.is_square() {
            return Err(Error::DimensionMismatch("A must be square and non-empty".into()));
        }
        let (r, q, p) = (c.nrows(), e.ncols(), h.nrows());
        dims("C", &c, r, n)?;
        dims("D", &d, r, q)?;
        dims("E", &e, n, q)?;
        dims("H", &h, p, n)?;
        Ok(Self { a, c, d, e, h })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn q(&self) -> usize {
        self.e.ncols()
    }
    pub fn r(&self) -> usize {
        self.c.nrows()
    }
    pub fn p(&self) -> usize {
        self.h.nrows()
    }
}

/// Row blocks `C_i`, `D_i` of the measured output, one per node.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputPartition {
    pub sizes: Vec<usize>,
    pub c_blocks: Vec<Mat>,
    pub d_blocks: Vec<Mat>,
}

impl OutputPartition {
    pub fn node_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn restack(&self) -> (Mat, Mat) {
        (vstack(&self.c_blocks), vstack(&self.d_blocks))
    }
}

pub fn partition_rows(plant: &Plant, sizes: &[usize]) -> Result<OutputPartition> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::DimensionMismatch(
            "partition sizes must be positive".into(),
        ));
    }
    let total: usize = sizes.iter().sum();
    if total != plant.r() {
        return Err(Error::DimensionMismatch(format!(
            "partition sums to {total}, but C has {} rows",
            plant.r()
        )));
    }
    let mut start = 0;
    let mut c_blocks = Vec::with_capacity(sizes.len());
    let mut d_blocks = Vec::with_capacity(sizes.len());
    for &ri in sizes {
        c_blocks.push(plant.c.rows(start, ri).into_owned());
        d_blocks.push(plant.d.rows(start, ri).into_owned());
        start += ri;
    }
    Ok(OutputPartition {
        sizes: sizes.to_vec(),
        c_blocks,
        d_blocks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub detectable: bool,
    pub node_detectable: Vec<bool>,
    pub warnings: Vec<String>,
}

/// Checks the standing assumptions: `(C, A)` detectable (hard requirement)
/// and no single `(C_i, A)` detectable (warning only, the problem is then
/// a centralized filtering problem in disguise).
pub fn validate_assumptions(plant: &Plant, partition: &OutputPartition) -> Result<AssumptionReport> {
    let detectable = undetectable_subspace(&plant.c, &plant.a)?.ncols() == 0;
    if !detectable {
        return Err(Error::AssumptionViolated("(C, A) is not detectable".into()));
    }
    let node_detectable = crate::par::try_collect(crate::par::map(&partition.c_blocks, |ci| {
        undetectable_subspace(ci, &plant.a).map(|s| s.ncols() == 0)
    }))?;
    let warnings = node_detectable
        .iter()
        .enumerate()
        .filter(|(_, d)| **d)
        .map(|(i, _)| {
            format!(
                "node {}: (C_i, A) is detectable on its own; a single local filter suffices",
                i + 1
            )
        })
        .collect();
    Ok(AssumptionReport {
        detectable,
        node_detectable,
        warnings,
    })
}

/// On-disk plant document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantFile {
    #[serde(rename = "A", with = "crate::io::mat")]
    pub a: Mat,
    #[serde(rename = "C", with = "crate::io::mat")]
    pub c: Mat,
    #[serde(rename = "D", with = "crate::io::mat")]
    pub d: Mat,
    #[serde(rename = "E", with = "crate::io::mat")]
    pub e: Mat,
    #[serde(rename = "H", with = "crate::io::mat")]
    pub h: Mat,
    pub partition: Vec<usize>,
}

impl PlantFile {
    pub fn into_parts(self) -> Result<(Plant, OutputPartition)> {
        let plant = Plant::new(self.a, self.c, self.d, self.e, self.h)?;
        let partition = partition_rows(&plant, &self.partition)?;
        Ok((plant, partition))
    }

    pub fn from_parts(plant: &Plant, partition: &OutputPartition) -> Self {
        Self {
            a: plant.a.clone(),
            c: plant.c.clone(),
            d: plant.d.clone(),
            e: plant.e.clone(),
            h: plant.h.clone(),
            partition: partition.sizes.clone(),
        }
    }
}

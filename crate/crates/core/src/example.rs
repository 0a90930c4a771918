//! Built-in four-node benchmark: two decoupled oscillators (frequencies 1
//! and 2) observed by four scalar sensors over a directed ring with a
//! bidirectional chord, together with a published reference design.

use crate::graph::{CommGraph, Edge};
use crate::linalg::Mat;
use crate::plant::{partition_rows, OutputPartition, Plant};

/// Reference parameters reported for the benchmark design.
pub const REFERENCE_EPSILON: f64 = 0.42;
pub const REFERENCE_KAPPA: f64 = 9.6;
pub const REFERENCE_GAMMA_BOUND: f64 = 1.3717;
pub const INITIAL_STATE: [f64; 4] = [1.0, -0.5, -1.0, 0.0];

pub fn plant() -> Plant {
    let a = Mat::from_row_slice(
        4,
        4,
        &[
            0.0, 1.0, 0.0, 0.0, //
            -1.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 2.0, //
            0.0, 0.0, -2.0, 0.0,
        ],
    );
    let e = Mat::from_column_slice(4, 1, &[0.1, 0.1, 0.0, 0.1]);
    let c = Mat::identity(4, 4);
    let d = Mat::from_column_slice(4, 1, &[0.1, 0.0, 0.1, 0.1]);
    let h = Mat::from_row_slice(
        3,
        4,
        &[
            1.0, 0.0, 0.0, 0.0, //
            0.0, 2.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ],
    );
    Plant::new(a, c, d, e, h).expect("benchmark plant is well-formed")
}

pub fn plant_and_partition() -> (Plant, OutputPartition) {
    let p = plant();
    let part = partition_rows(&p, &[1, 1, 1, 1]).expect("benchmark partition is valid");
    (p, part)
}

/// Edges 4 <-> 1, 2 -> 1, 3 -> 2, 1 -> 3, unit weights.
pub fn graph() -> CommGraph {
    let e = |from, to| Edge {
        from,
        to,
        weight: 1.0,
    };
    CommGraph::from_edges(4, &[e(4, 1), e(1, 4), e(2, 1), e(3, 2), e(1, 3)])
        .expect("benchmark graph is valid")
}

/// Published gains `F_i` (4 decimals).
pub fn reference_f() -> Vec<Mat> {
    let block = |a: f64, b: f64, c: f64, first: bool| {
        let mut f = Mat::zeros(4, 4);
        let (o, k) = if first { (0, 2) } else { (2, 0) };
        f[(o, o)] = a;
        f[(o, o + 1)] = b;
        f[(o + 1, o)] = b;
        f[(o + 1, o + 1)] = c;
        f[(k, k)] = REFERENCE_KAPPA;
        f[(k + 1, k + 1)] = REFERENCE_KAPPA;
        f
    };
    vec![
        block(0.3636, 0.0837, 0.3442, true),
        block(0.3460, -0.0660, 0.3579, true),
        block(0.4274, 0.0491, 0.4217, false),
        block(0.4220, -0.0445, 0.4266, false),
    ]
}

/// Published gains `G_i` (4 decimals).
pub fn reference_g() -> Vec<Mat> {
    vec![
        Mat::from_column_slice(4, 1, &[0.4445, 0.0488, 0.0, 0.0]),
        Mat::from_column_slice(4, 1, &[-0.0488, 0.4445, 0.0, 0.0]),
        Mat::from_column_slice(4, 1, &[0.0, 0.0, 0.4465, 0.0248]),
        Mat::from_column_slice(4, 1, &[0.0, 0.0, -0.0248, 0.4465]),
    ]
}

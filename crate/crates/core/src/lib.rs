//! Synthesis and verification of H2 and H-infinity suboptimal distributed
//! filters for linear plants observed by a network of sensors.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod decomp;
pub mod error;
pub mod example;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod lmi;
pub mod mateq;
pub mod par;
pub mod plant;
pub mod sim;
pub mod synthesis;

pub use error::{Error, Result};

//! Numerical laboratory for Green's-function mass functionals on
//! asymptotically Euclidean 3-metrics.

pub mod annulus;
pub mod config;
pub mod error;
pub mod functionals;
pub mod grid;
pub mod levelset;
pub mod math;
pub mod metric;
pub mod oracle1d;
pub mod pipeline;
pub mod report;
pub mod solver;

pub use error::{LabError, Result};

//! Optimal control of jump-diffusions whose cost is a BSDE kept below an
//! upper obstacle. Monte Carlo BSDE solvers and an obstacle HJB scheme are
//! cross-checked against each other.

pub mod config;
pub mod error;
pub mod feedback;
pub mod forward;
pub mod kulik;
pub mod pde;
pub mod problem;
pub mod rbsde;
pub mod regression;
pub mod report;
pub mod rng;
pub mod suites;
pub mod tree;
pub mod value;

pub use error::{Error, Result};

//! Numerical laboratory for posterior contraction of Gaussian-process,
//! random-sieve and graph-Laplacian priors in nonparametric regression.

pub mod basis;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod graph;
pub mod gram;
pub mod harness;
pub mod linalg;
pub mod kernel;
pub mod rng;
pub mod sieve;
pub mod stats;

pub use error::{Error, Result};

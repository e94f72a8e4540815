//! Numerical toolkit for the von Neumann entropy on the positive cone, its
//! rank-`k` approximators `H_k`, the gaps `Δ_k` and their spectral
//! coarse-graining bounds, and uniform-approximation diagnostics.

pub mod approximator;
pub mod checks;
pub mod counterexamples;
pub mod ensembles;
pub mod entropy;
pub mod error;
pub mod linalg;
pub mod ua_sweep;

pub use error::{Error, Result};

//! Spatiotemporal boundary detection for areal data.
//!
//! A Leroux CAR latent field whose adjacency weights decay with pairwise
//! dissimilarity, `w_ij = exp(−z_ijᵀ α_t)`, with the visit-level parameters
//! `(μ_t, log τ_t, log α_t)` linked over time by a separable matrix-normal
//! prior. Observations enter through a zero-censored Tobit layer.

pub mod car;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod predict;
pub mod sampler;
pub mod sim;
pub mod temporal;

pub use error::{Result, WombleError};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

//! Next-basket recommendation with a frequency-aware deconfounder.
//!
//! The crate factorizes each user's personalized item frequency (PIF) with a
//! neural tensor layer, then learns confounder embeddings with a pairwise
//! ranking loss and mixes the two scores through a trainable weight `ω`.
//! Frequency and matrix-factorization baselines, ranking and diversity
//! metrics, a confounded synthetic data generator and the experiment
//! harness behind the `fender` binary live alongside it.

pub mod dataset;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod synthgen;

pub use error::{Error, Result};

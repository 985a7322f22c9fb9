//! Bayesian hierarchical models for areal count panels.
//!
//! Each areal unit gets its own level and linear time trend on the
//! inverse-hyperbolic-sine scale. The unit coefficients are shrunk either
//! globally or locally through a Leroux conditional autoregressive prior,
//! optionally with borders that the data can switch off ("barriers").
//! Posterior inference is a Gibbs sampler built on sparse Cholesky
//! factorizations.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod areal;
pub mod diagnostics;
pub mod error;
pub mod evaluate;
pub mod graph;
pub mod inputs;
pub mod model;
pub mod sampler;
pub mod sparse;
pub mod summarize;
pub mod synth;

pub use error::{Error, Result};

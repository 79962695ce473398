//! Stochastic self-attention sequence model with particle-filter training.
//!
//! Keys, queries, values and the attention vector of a single-head,
//! single-layer transformer cell are Gaussian latent states. A particle
//! filter tracks them, the particle-weighted complete-data log-likelihood
//! drives gradient training of the weight matrices, and explicit EM steps
//! update the noise variances. The predictive distribution is the particle
//! mixture, from which forecasts and prediction intervals are drawn.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod diffcore;
pub mod error;
pub mod evalkit;
pub mod model;
pub mod numkit;
pub mod smc;
pub mod trainer;

pub use error::{Error, Result};

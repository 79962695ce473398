//! The stochastic self-attention cell.
//!
//! At each step t the cell draws `(q, k, v)` from `X_t` through Gaussian
//! projections and draws the attention vector `z(t)` from the states of the
//! previous `lag` steps. The observation head maps `z` to the mean of `X_t`.

mod cell;
mod params;
pub(crate) mod taped;

pub(crate) use cell::attention_mean as cell_attention_mean;
pub use cell::{
    attention_vector, attention_weights, deterministic_forward, observation_logdensity, observation_mean, project_qkv,
    sample_sequence, transition_logdensity, AttentionDraw, AttentionWindow, LatentState, QkvDraw,
};
pub use params::{Dims, HeadKind, ModelParams, NoiseScales, ObservationHead, ParamId};

//! The separation network, its skip and recurrence variants, per-source
//! enhancement networks, and iterated residual prediction.

mod check;
mod config;
mod enhancer;
mod separator;

pub use check::gradient_check_model;
pub use config::{
    format_specs, parse_specs, LayerSpec, ModelConfig, Recurrence, ResidualConfig, SkipKind, BINS, LEAKY_SLOPE,
    SOURCES,
};
pub use enhancer::EnhancerSet;
pub use separator::{residual_grid, Prediction, Separator};

use thiserror::Error;

use crate::autodiff::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration at {layer}: {reason}")]
    Config { layer: String, reason: String },
    #[error("expected input with {expected} channels as (batch, channels, frames), got {got:?}")]
    WrongInput { expected: usize, got: Vec<usize> },
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[cfg(test)]
mod tests;

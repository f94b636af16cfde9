//! Layers: 1D convolution along time, its transpose, GRU, weight and
//! batch normalization, and the Adam optimizer.

pub mod adam;
pub mod conv;
pub mod gru;
pub mod init;
pub mod layers;
pub mod norm;
pub mod param;

pub use adam::{AdamConfig, AdamState};
pub use conv::{conv1d, conv_transpose1d, same_crop, same_padding};
pub use gru::{gru, GruLayer};
pub use layers::ConvLayer;
pub use norm::{batch_norm_fixed, batch_norm_train, channel_moments, weight_norm, BatchNorm, RunningStats};
pub use param::{Param, ParamGroup, ParamId, ParamStore};

/// Batch-norm behaviour switch; everything else is mode independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormKind {
    WeightNorm,
    BatchNorm,
    None,
}

impl NormKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::WeightNorm => "weight_norm",
            NormKind::BatchNorm => "batch_norm",
            NormKind::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "weight_norm" => Some(NormKind::WeightNorm),
            "batch_norm" => Some(NormKind::BatchNorm),
            "none" => Some(NormKind::None),
            _ => None,
        }
    }
}

//! Dataset segmentation, online remix augmentation, the loss, and the
//! training loop with early stopping.

mod data;
mod loss;
pub mod synthetic;
mod trainer;

pub use data::{aligned_example, augment_sample, draw_indices, segment_songs, song_clips, Batch, Example, Segmented, Song, SourcePool};
pub(crate) use data::to_scalar;
pub use loss::{mse_loss, mse_loss_raw};
pub use synthetic::{synthetic_songs, SyntheticConfig, SYNTHETIC_SOURCES};
pub use trainer::{
    batch_mse, batches, fit, validation_loss, EnhancerObjective, ModelSnapshot, Objective, SeparatorObjective,
    StepStats, TrainConfig, TrainMode, TrainReport,
};

use thiserror::Error;

use crate::autodiff::TensorError;
use crate::dsp::DspError;
use crate::models::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: u64, loss: f64 },
    #[error("training diverged at step {step}: parameter `{param}` overflowed")]
    NonFiniteParameter { step: u64, param: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

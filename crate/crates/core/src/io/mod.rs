//! File-level tooling: WAV audio, the dataset layout, run configuration,
//! checkpoints, whole-song separation, SDR reports and spectrogram dumps.

mod checkpoint;
mod config;
mod dataset;
mod evaluate;
mod matrix;
mod pipeline;
mod separate;
mod wav;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainMeta, FORMAT_MAJOR, FORMAT_MINOR, MAGIC};
pub use config::{RunConfig, DEFAULT_SOURCES};
pub use dataset::{load_song, load_split, track_dirs, LoadedSplit};
pub use evaluate::{evaluate_estimates, evaluate_model, EvalReport, EvalRow, SourceSummary};
pub use matrix::{read_matrix, write_matrix};
pub use pipeline::{prepare_data, train_enhancers, train_separator};
pub use separate::{separate_song, Accompaniment, Separation};
pub use wav::{read_wav, write_wav, WavFormat};

use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::TensorError;
use crate::dsp::DspError;
use crate::models::ModelError;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("corrupt checkpoint at byte {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
    #[error("checkpoint format {found}.x is newer than supported {supported}.x")]
    UnsupportedVersion { found: u16, supported: u16 },
    #[error("checkpoint does not match the requested setup: {0}")]
    ConfigMismatch(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl IoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 configuration, 3 data (including unreadable or
    /// unwritable files), 4 divergence, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            IoError::Config(_) | IoError::ConfigMismatch(_) => 2,
            IoError::Model(ModelError::Config { .. } | ModelError::Parse(_)) => 2,
            IoError::Train(TrainError::Config(_)) => 2,
            IoError::Train(TrainError::Model(ModelError::Config { .. } | ModelError::Parse(_))) => 2,
            IoError::Train(TrainError::Diverged { .. } | TrainError::NonFiniteParameter { .. }) => 4,
            IoError::Data(_) | IoError::Io { .. } | IoError::Wav { .. } => 3,
            IoError::Corrupt { .. } | IoError::UnsupportedVersion { .. } => 3,
            IoError::Train(TrainError::Data(_)) | IoError::Dsp(_) => 3,
            _ => 1,
        }
    }
}

#[cfg(test)]
mod tests;

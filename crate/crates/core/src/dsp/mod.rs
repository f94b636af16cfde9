//! Spectral analysis and resynthesis, the log-magnitude feature map,
//! soft-mask filtering and the SDR metric.

mod audio;
mod features;
mod sdr;
mod stft;
mod wiener;

pub use audio::{AudioClip, SAMPLE_RATE};
pub use features::{features_to_magnitude, log_magnitude};
pub use sdr::{sdr, sdr_channel, SDR_CAP_DB};
pub use stft::{hann_window, istft, stft, ComplexSpectrogram, Stft, StftConfig, HOP_SIZE, WINDOW_SIZE};
pub use wiener::{wiener_masks, POWER_FLOOR};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DspError {
    #[error("signal of {len} samples is shorter than one window ({window})")]
    TooShort { len: usize, window: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("source magnitudes must be finite and non-negative")]
    NegativeMagnitude,
    #[error("length mismatch: reference {reference} samples, estimate {estimate}")]
    LengthMismatch { reference: usize, estimate: usize },
    #[error("channel mismatch: reference {reference}, estimate {estimate}")]
    ChannelMismatch { reference: usize, estimate: usize },
    #[error("audio contains non-finite samples")]
    NonFinite,
    #[error("fft: {0}")]
    Fft(String),
    #[error("{0}")]
    Invalid(String),
}

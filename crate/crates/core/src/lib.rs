//! Music source separation with a one-dimensional convolutional denoising
//! auto-encoder whose skip connections run through recurrent layers.
//!
//! The crate contains its own reverse-mode differentiation engine
//! ([`autodiff`]), the layer vocabulary ([`nn`]), spectral processing
//! ([`dsp`]), the separation / enhancement / residual networks
//! ([`models`]), training ([`training`]) and file-level tooling ([`io`]).
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix the
//! precision: `f32` for training and inference, `f64` for gradient checks.

pub mod autodiff;
pub mod dsp;
pub mod io;
pub mod models;
pub mod nn;
pub mod scalar;
pub mod training;

pub use scalar::{DType, Scalar};

pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Separator32 = models::Separator<f32>;
pub type Separator64 = models::Separator<f64>;
pub type Spectrogram32 = dsp::ComplexSpectrogram<f32>;
pub type Spectrogram64 = dsp::ComplexSpectrogram<f64>;

//! Hann-windowed short-time Fourier transform with centered frames and its
//! weighted overlap-add inverse.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::autodiff::Tensor;
use crate::dsp::DspError;
use crate::scalar::Scalar;

pub const WINDOW_SIZE: usize = 2048;
pub const HOP_SIZE: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub window: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window: WINDOW_SIZE,
            hop: HOP_SIZE,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.window / 2 + 1
    }

    /// Frames produced for a signal of `len` samples.
    pub fn frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }
}

/// Complex spectrum laid out `(bins, frames)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram<T> {
    pub config: StftConfig,
    bins: usize,
    frames: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> ComplexSpectrogram<T> {
    pub fn new(config: StftConfig, frames: usize, data: Vec<Complex<T>>) -> Result<Self, DspError> {
        let bins = config.bins();
        if data.len() != bins * frames {
            return Err(DspError::Shape(format!(
                "spectrogram data has {} values, expected {bins} x {frames}",
                data.len()
            )));
        }
        Ok(Self {
            config,
            bins,
            frames,
            data,
        })
    }

    pub fn zeros(config: StftConfig, frames: usize) -> Self {
        let bins = config.bins();
        Self {
            config,
            bins,
            frames,
            data: vec![Complex::new(T::zero(), T::zero()); bins * frames],
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn at(&self, bin: usize, frame: usize) -> Complex<T> {
        self.data[bin * self.frames + frame]
    }

    /// Magnitudes as an `(F, T)` tensor.
    pub fn magnitudes(&self) -> Tensor<T> {
        let data = self.data.iter().map(|c| c.norm()).collect();
        Tensor::new([self.bins, self.frames], data).expect("shape matches data")
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.bins == other.bins && self.frames == other.frames
    }
}

/// Periodic Hann window; with a hop of half the window the squared
/// windows overlap-add to a constant in the interior.
pub fn hann_window<T: Scalar>(size: usize) -> Vec<T> {
    (0..size)
        .map(|n| T::lit(0.5 - 0.5 * (2.0 * PI * n as f64 / size as f64).cos()))
        .collect()
}

/// Reusable transform plans for one configuration.
pub struct Stft<T: Scalar> {
    config: StftConfig,
    window: Vec<T>,
    forward: Arc<dyn RealToComplex<T>>,
    inverse: Arc<dyn ComplexToReal<T>>,
}

impl<T: Scalar> Stft<T> {
    pub fn new(config: StftConfig) -> Self {
        assert!(config.window >= 2 && config.hop >= 1 && config.window.is_multiple_of(2));
        let mut planner = RealFftPlanner::<T>::new();
        Self {
            config,
            window: hann_window(config.window),
            forward: planner.plan_fft_forward(config.window),
            inverse: planner.plan_fft_inverse(config.window),
        }
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    /// Reflection-pads `window / 2` samples on both ends, then frames every
    /// `hop` samples.
    pub fn forward(&self, signal: &[T]) -> Result<ComplexSpectrogram<T>, DspError> {
        let n = self.config.window;
        if signal.len() < n {
            return Err(DspError::TooShort {
                len: signal.len(),
                window: n,
            });
        }
        let half = n / 2;
        let padded_len = signal.len() + 2 * half;
        let padded: Vec<T> = (0..padded_len)
            .map(|i| {
                let pos = i as isize - half as isize;
                let len = signal.len() as isize;
                let idx = if pos < 0 {
                    -pos
                } else if pos >= len {
                    2 * (len - 1) - pos
                } else {
                    pos
                };
                signal[idx as usize]
            })
            .collect();

        let frames = 1 + (padded_len - n) / self.config.hop;
        let bins = self.config.bins();
        let mut data = vec![Complex::new(T::zero(), T::zero()); bins * frames];
        let mut frame = self.forward.make_input_vec();
        let mut spectrum = self.forward.make_output_vec();
        let mut scratch = self.forward.make_scratch_vec();
        for t in 0..frames {
            let start = t * self.config.hop;
            for (i, f) in frame.iter_mut().enumerate() {
                *f = padded[start + i] * self.window[i];
            }
            self.forward
                .process_with_scratch(&mut frame, &mut spectrum, &mut scratch)
                .map_err(|e| DspError::Fft(e.to_string()))?;
            for (f, &c) in spectrum.iter().enumerate() {
                data[f * frames + t] = c;
            }
        }
        ComplexSpectrogram::new(self.config, frames, data)
    }

    /// Weighted overlap-add inverse, normalized by the summed squared
    /// window, trimmed to `len` samples (default `(frames - 1) * hop`).
    pub fn inverse(&self, spec: &ComplexSpectrogram<T>, len: Option<usize>) -> Result<Vec<T>, DspError> {
        if spec.config != self.config {
            return Err(DspError::Shape(format!(
                "spectrogram config {:?} does not match transform {:?}",
                spec.config, self.config
            )));
        }
        let n = self.config.window;
        let hop = self.config.hop;
        let frames = spec.frames();
        let padded_len = (frames - 1) * hop + n;
        let mut out = vec![T::zero(); padded_len];
        let mut envelope = vec![T::zero(); padded_len];
        let mut spectrum = self.inverse.make_input_vec();
        let mut frame = self.inverse.make_output_vec();
        let mut scratch = self.inverse.make_scratch_vec();
        let scale = T::one() / T::lit(n as f64);
        let last = spectrum.len() - 1;
        for t in 0..frames {
            for (f, s) in spectrum.iter_mut().enumerate() {
                *s = spec.at(f, t);
            }
            spectrum[0].im = T::zero();
            spectrum[last].im = T::zero();
            self.inverse
                .process_with_scratch(&mut spectrum, &mut frame, &mut scratch)
                .map_err(|e| DspError::Fft(e.to_string()))?;
            let start = t * hop;
            for i in 0..n {
                let w = self.window[i];
                out[start + i] += frame[i] * scale * w;
                envelope[start + i] += w * w;
            }
        }
        let tiny = T::lit(1e-10);
        for (o, &e) in out.iter_mut().zip(&envelope) {
            *o = if e > tiny { *o / e } else { T::zero() };
        }
        let half = n / 2;
        let natural = padded_len - 2 * half;
        let len = len.unwrap_or(natural);
        let mut signal: Vec<T> = out.into_iter().skip(half).take(len).collect();
        signal.resize(len, T::zero());
        Ok(signal)
    }
}

/// One-shot forward transform with a fresh plan.
pub fn stft<T: Scalar>(signal: &[T], config: StftConfig) -> Result<ComplexSpectrogram<T>, DspError> {
    Stft::new(config).forward(signal)
}

/// One-shot inverse transform with a fresh plan.
pub fn istft<T: Scalar>(spec: &ComplexSpectrogram<T>, len: Option<usize>) -> Result<Vec<T>, DspError> {
    Stft::new(spec.config).inverse(spec, len)
}

//! Single-pass soft-mask Wiener filtering against the mixture spectrum.
//!
//! This is a simplification of the iterated multichannel Wiener filter:
//! each channel is masked independently and no spatial covariance is
//! estimated.

use num_complex::Complex;

use crate::autodiff::Tensor;
use crate::dsp::{ComplexSpectrogram, DspError};
use crate::scalar::Scalar;

/// Power floor below which the masks no longer sum to one.
pub const POWER_FLOOR: f64 = 1e-10;

/// `mask_s = |S_s|^2 / max(sum_j |S_j|^2, floor)` applied to the complex
/// mixture, so every estimate carries the mixture phase.
pub fn wiener_masks<T: Scalar>(
    source_mags: &[Tensor<T>],
    mixture: &ComplexSpectrogram<T>,
) -> Result<Vec<ComplexSpectrogram<T>>, DspError> {
    let shape = [mixture.bins(), mixture.frames()];
    for m in source_mags {
        if m.shape() != shape {
            return Err(DspError::Shape(format!(
                "source magnitudes {:?} do not match mixture {:?}",
                m.shape(),
                shape
            )));
        }
        if m.data().iter().any(|&v| v < T::zero() || !v.is_finite()) {
            return Err(DspError::NegativeMagnitude);
        }
    }
    let cells = shape[0] * shape[1];
    let floor = T::lit(POWER_FLOOR);
    let mut total = vec![T::zero(); cells];
    for m in source_mags {
        for (acc, &v) in total.iter_mut().zip(m.data()) {
            *acc += v * v;
        }
    }
    source_mags
        .iter()
        .map(|m| {
            let data: Vec<Complex<T>> = m
                .data()
                .iter()
                .zip(&total)
                .zip(mixture.data())
                .map(|((&mag, &p), &x)| x * (mag * mag / p.max(floor)))
                .collect();
            ComplexSpectrogram::new(mixture.config, mixture.frames(), data)
        })
        .collect()
}

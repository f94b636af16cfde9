use crate::autodiff::Tensor;
use crate::dsp::ComplexSpectrogram;
use crate::scalar::Scalar;

/// `log(1 + |X|)` of a spectrogram, `(F, T)`.
pub fn log_magnitude<T: Scalar>(spec: &ComplexSpectrogram<T>) -> Tensor<T> {
    spec.magnitudes().map(|m| m.ln_1p())
}

/// Inverse of the feature map; negative features map to zero magnitude.
pub fn features_to_magnitude<T: Scalar>(features: &Tensor<T>) -> Tensor<T> {
    features.map(|v| v.exp_m1().max(T::zero()))
}

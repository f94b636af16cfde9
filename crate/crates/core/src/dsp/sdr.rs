//! Simplified signal-to-distortion ratio.
//!
//! This is the plain energy ratio `10 log10(|s|^2 / |s - s_hat|^2)` over a
//! whole track, not the BSS-Eval decomposition into interference, noise
//! and artifact terms.

use crate::dsp::{AudioClip, DspError};

pub const SDR_CAP_DB: f64 = 100.0;

/// SDR of one channel; `None` when the reference is silent.
pub fn sdr_channel(reference: &[f32], estimate: &[f32]) -> Option<f64> {
    let mut signal = 0.0f64;
    let mut error = 0.0f64;
    for (&s, &e) in reference.iter().zip(estimate) {
        let (s, e) = (s as f64, e as f64);
        signal += s * s;
        error += (s - e) * (s - e);
    }
    if signal == 0.0 {
        return None;
    }
    let db = if error == 0.0 {
        SDR_CAP_DB
    } else {
        10.0 * (signal / error).log10()
    };
    Some(db.clamp(-SDR_CAP_DB, SDR_CAP_DB))
}

/// Per-channel SDR averaged over channels with a non-silent reference.
pub fn sdr(reference: &AudioClip, estimate: &AudioClip) -> Result<Option<f64>, DspError> {
    if reference.num_channels() != estimate.num_channels() {
        return Err(DspError::ChannelMismatch {
            reference: reference.num_channels(),
            estimate: estimate.num_channels(),
        });
    }
    if reference.len() != estimate.len() {
        return Err(DspError::LengthMismatch {
            reference: reference.len(),
            estimate: estimate.len(),
        });
    }
    let values: Vec<f64> = (0..reference.num_channels())
        .filter_map(|c| sdr_channel(reference.channel(c), estimate.channel(c)))
        .collect();
    Ok((!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64))
}

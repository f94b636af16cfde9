use crate::autodiff::Tensor;
use crate::dsp::{features_to_magnitude, log_magnitude, wiener_masks, AudioClip, Stft, StftConfig, POWER_FLOOR};
use crate::io::{Checkpoint, IoError};
use crate::models::{EnhancerSet, Separator};
use crate::scalar::Scalar;
use crate::training::to_scalar;

/// Which estimated stems make up the accompaniment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Accompaniment {
    /// Every stem except `vocals`.
    #[default]
    NonVocal,
    /// All stems, which reproduces the mixture.
    All4,
}

impl Accompaniment {
    pub fn as_str(self) -> &'static str {
        match self {
            Accompaniment::NonVocal => "nonvocal",
            Accompaniment::All4 => "all4",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Accompaniment::NonVocal, Accompaniment::All4]
            .into_iter()
            .find(|a| a.as_str() == s)
    }

    /// Indices of the stems summed into the accompaniment, or `None` when
    /// the stem set has no `vocals` entry or already names one
    /// `accompaniment`.
    pub fn members(self, names: &[String]) -> Option<Vec<usize>> {
        if !names.iter().any(|n| n == "vocals") || names.iter().any(|n| n == "accompaniment") {
            return None;
        }
        Some(
            (0..names.len())
                .filter(|&i| self == Accompaniment::All4 || names[i] != "vocals")
                .collect(),
        )
    }
}

/// Estimated stems of one song, each as long as the input.
#[derive(Debug, Clone)]
pub struct Separation {
    pub names: Vec<String>,
    pub stems: Vec<AudioClip>,
    pub accompaniment: Option<AudioClip>,
}

impl Separation {
    /// Stems followed by the accompaniment, with their names.
    pub fn outputs(&self) -> Vec<(&str, &AudioClip)> {
        let mut out: Vec<(&str, &AudioClip)> = self.names.iter().map(String::as_str).zip(&self.stems).collect();
        if let Some(a) = &self.accompaniment {
            out.push(("accompaniment", a));
        }
        out
    }
}

/// Separates a whole song. Each channel is processed on its own: STFT,
/// log features, the network (plus enhancers when given), soft masks from
/// the estimated magnitudes applied to the mixture spectrum, inverse STFT.
/// The stems therefore always add up to the resynthesized mixture.
pub fn separate_song<T: Scalar>(
    separator: &Separator<T>,
    enhancers: Option<&EnhancerSet<T>>,
    stft: StftConfig,
    names: &[String],
    song: &AudioClip,
    accompaniment: Accompaniment,
) -> Result<Separation, IoError> {
    let cfg = separator.config();
    if names.len() != cfg.sources {
        return Err(IoError::ConfigMismatch(format!(
            "{} stem names for a {}-source model",
            names.len(),
            cfg.sources
        )));
    }
    if stft.bins() != cfg.bins {
        return Err(IoError::ConfigMismatch(format!(
            "STFT gives {} bins, model expects {}",
            stft.bins(),
            cfg.bins
        )));
    }
    if song.len() < stft.window {
        return Err(IoError::Data(format!(
            "song of {} samples is shorter than one window ({})",
            song.len(),
            stft.window
        )));
    }
    let transform = Stft::<T>::new(stft);
    let (sources, bins) = (cfg.sources, cfg.bins);
    let mut channels = vec![Vec::with_capacity(song.num_channels()); sources];
    for samples in song.channels() {
        let mixture = transform.forward(&to_scalar::<T>(samples))?;
        let frames = mixture.frames();
        let mut est = separator.separate(&log_magnitude(&mixture))?;
        if let Some(e) = enhancers {
            est = e.infer(&est.reshape([1, sources * bins, frames])?)?;
        }
        let mut mags = est
            .data()
            .chunks_exact(bins * frames)
            .map(|block| Tensor::new([bins, frames], block.to_vec()).map(|t| features_to_magnitude(&t)))
            .collect::<Result<Vec<_>, _>>()?;
        share_silent_bins(&mut mags);
        for (s, masked) in wiener_masks(&mags, &mixture)?.iter().enumerate() {
            let wave = transform.inverse(masked, Some(song.len()))?;
            channels[s].push(wave.iter().map(|v| v.to_f64_lossy() as f32).collect::<Vec<f32>>());
        }
    }
    let stems = channels
        .into_iter()
        .map(|c| AudioClip::new(song.sample_rate, c))
        .collect::<Result<Vec<_>, _>>()?;
    let accompaniment = accompaniment
        .members(names)
        .map(|idx| AudioClip::sum(idx.iter().map(|&i| &stems[i])))
        .transpose()?;
    Ok(Separation {
        names: names.to_vec(),
        stems,
        accompaniment,
    })
}

/// Where every estimate is (numerically) silent the soft masks would drop
/// the mixture; such bins are split equally instead.
fn share_silent_bins<T: Scalar>(mags: &mut [Tensor<T>]) {
    let floor = T::lit(POWER_FLOOR);
    for i in 0..mags.first().map_or(0, Tensor::len) {
        let power: T = mags.iter().map(|m| m.data()[i] * m.data()[i]).sum();
        if power <= floor {
            for m in mags.iter_mut() {
                m.data_mut()[i] = T::one();
            }
        }
    }
}

impl<T: Scalar> Checkpoint<T> {
    /// [`separate_song`] with the stored networks and settings.
    pub fn separate(&self, song: &AudioClip, accompaniment: Accompaniment) -> Result<Separation, IoError> {
        separate_song(
            &self.separator,
            self.enhancers.as_ref(),
            self.config.stft,
            &self.config.sources,
            song,
            accompaniment,
        )
    }
}

use crate::dsp::DspError;

/// Canonical sample rate of the training data.
pub const SAMPLE_RATE: u32 = 44_100;

/// Multichannel audio, one sample vector per channel, all of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub sample_rate: u32,
    channels: Vec<Vec<f32>>,
}

impl AudioClip {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f32>>) -> Result<Self, DspError> {
        let Some(first) = channels.first() else {
            return Err(DspError::Invalid("audio clip without channels".into()));
        };
        let len = first.len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(DspError::Invalid("channel lengths differ".into()));
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(DspError::NonFinite);
        }
        Ok(Self {
            sample_rate,
            channels,
        })
    }

    pub fn mono(sample_rate: u32, samples: Vec<f32>) -> Result<Self, DspError> {
        Self::new(sample_rate, vec![samples])
    }

    pub fn silence(sample_rate: u32, channels: usize, len: usize) -> Self {
        Self {
            sample_rate,
            channels: vec![vec![0.0; len]; channels.max(1)],
        }
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<f32>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f32>> {
        self.channels
    }

    /// Samples `start .. start + len` of every channel.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            sample_rate: self.sample_rate,
            channels: self.channels.iter().map(|c| c[start..start + len].to_vec()).collect(),
        }
    }

    /// Sample-wise sum of clips with identical layout.
    pub fn sum<'a>(clips: impl IntoIterator<Item = &'a AudioClip>) -> Result<Self, DspError> {
        let mut iter = clips.into_iter();
        let mut acc = iter
            .next()
            .ok_or_else(|| DspError::Invalid("sum of no clips".into()))?
            .clone();
        for clip in iter {
            if clip.num_channels() != acc.num_channels() || clip.len() != acc.len() {
                return Err(DspError::LengthMismatch {
                    reference: acc.len(),
                    estimate: clip.len(),
                });
            }
            for (a, b) in acc.channels.iter_mut().zip(&clip.channels) {
                a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
            }
        }
        Ok(acc)
    }
}

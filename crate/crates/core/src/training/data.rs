use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::dsp::{log_magnitude, AudioClip, Stft};
use crate::scalar::Scalar;
use crate::training::TrainError;

/// A song as aligned stems, one clip per source.
#[derive(Debug, Clone)]
pub struct Song {
    pub name: String,
    pub stems: Vec<AudioClip>,
}

impl Song {
    pub fn new(name: impl Into<String>, stems: Vec<AudioClip>) -> Result<Self, TrainError> {
        let name = name.into();
        let first = stems
            .first()
            .ok_or_else(|| TrainError::Data(format!("song `{name}` has no stems")))?;
        if stems.iter().any(|s| {
            s.len() != first.len() || s.num_channels() != first.num_channels() || s.sample_rate != first.sample_rate
        }) {
            return Err(TrainError::Data(format!("stems of `{name}` are not aligned")));
        }
        Ok(Self { name, stems })
    }

    pub fn len(&self) -> usize {
        self.stems[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mixture(&self) -> AudioClip {
        AudioClip::sum(&self.stems).expect("stems are aligned")
    }
}

/// Mono sub-clips per source. Every clip has the same length and rate.
#[derive(Debug, Clone)]
pub struct SourcePool {
    sources: Vec<Vec<AudioClip>>,
}

impl SourcePool {
    pub fn new(sources: Vec<Vec<AudioClip>>) -> Result<Self, TrainError> {
        if sources.is_empty() || sources.iter().any(Vec::is_empty) {
            return Err(TrainError::Data("every source pool needs at least one clip".into()));
        }
        let first = &sources[0][0];
        for clip in sources.iter().flatten() {
            if clip.len() != first.len() || clip.sample_rate != first.sample_rate || clip.num_channels() != 1 {
                return Err(TrainError::Data("pool clips must be mono with equal length and rate".into()));
            }
        }
        Ok(Self { sources })
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn clips(&self, source: usize) -> &[AudioClip] {
        &self.sources[source]
    }

    pub fn clip_len(&self) -> usize {
        self.sources[0][0].len()
    }
}

/// Result of cutting songs into sub-clips.
#[derive(Debug, Clone)]
pub struct Segmented {
    pub pool: SourcePool,
    /// Aligned validation examples: one mono clip per source each.
    pub validation: Vec<Vec<AudioClip>>,
    pub train_songs: Vec<String>,
    pub validation_songs: Vec<String>,
}

/// Aligned consecutive non-overlapping sub-clips of `clip_len` samples,
/// one group per (window, channel); the trailing remainder is dropped.
pub fn song_clips(song: &Song, clip_len: usize) -> Vec<Vec<AudioClip>> {
    let count = song.len() / clip_len;
    let channels = song.stems[0].num_channels();
    let mut out = Vec::with_capacity(count * channels);
    for k in 0..count {
        for c in 0..channels {
            out.push(
                song.stems
                    .iter()
                    .map(|stem| {
                        let samples = stem.channel(c)[k * clip_len..(k + 1) * clip_len].to_vec();
                        AudioClip::mono(stem.sample_rate, samples).expect("finite samples")
                    })
                    .collect(),
            );
        }
    }
    out
}

/// Splits songs into train and validation sets by a seeded shuffle
/// (`train_ratio` of the songs, rounded, at least one of each when there
/// are two or more songs) and cuts both into aligned sub-clips. Songs
/// shorter than one clip are skipped.
pub fn segment_songs(
    songs: &[Song],
    clip_len: usize,
    train_ratio: f64,
    seed: u64,
) -> Result<Segmented, TrainError> {
    if clip_len == 0 {
        return Err(TrainError::Data("clip length must be positive".into()));
    }
    let usable: Vec<&Song> = songs
        .iter()
        .filter(|s| {
            let ok = s.len() >= clip_len;
            if !ok {
                log::warn!("skipping `{}`: shorter than one {clip_len}-sample clip", s.name);
            }
            ok
        })
        .collect();
    if usable.len() < 2 {
        return Err(TrainError::Data(format!(
            "need at least two songs of one clip or more, found {}",
            usable.len()
        )));
    }
    let sources = usable[0].stems.len();
    if usable.iter().any(|s| s.stems.len() != sources) {
        return Err(TrainError::Data("songs have different source counts".into()));
    }
    let mut order: Vec<usize> = (0..usable.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((usable.len() as f64 * train_ratio).round() as usize).clamp(1, usable.len() - 1);

    let mut pool = vec![Vec::new(); sources];
    let mut validation = Vec::new();
    let (mut train_songs, mut validation_songs) = (Vec::new(), Vec::new());
    for (rank, &i) in order.iter().enumerate() {
        let song = usable[i];
        let groups = song_clips(song, clip_len);
        if rank < n_train {
            train_songs.push(song.name.clone());
            for group in groups {
                for (s, clip) in group.into_iter().enumerate() {
                    pool[s].push(clip);
                }
            }
        } else {
            validation_songs.push(song.name.clone());
            validation.extend(groups);
        }
    }
    Ok(Segmented {
        pool: SourcePool::new(pool)?,
        validation,
        train_songs,
        validation_songs,
    })
}

/// Input features and training targets of one example.
#[derive(Debug, Clone)]
pub struct Example<T> {
    /// `(F, T)` log-magnitude of the mixture.
    pub mixture: Tensor<T>,
    /// `(S * F, T)` concatenated source log-magnitudes.
    pub targets: Tensor<T>,
}

pub(crate) fn to_scalar<T: Scalar>(samples: &[f32]) -> Vec<T> {
    samples.iter().map(|&v| T::lit(v as f64)).collect()
}

/// Features of aligned mono source clips, mixed by summation.
pub fn aligned_example<T: Scalar>(stft: &Stft<T>, sources: &[&AudioClip]) -> Result<Example<T>, TrainError> {
    let mixture = AudioClip::sum(sources.iter().copied())?;
    let mix = log_magnitude(&stft.forward(&to_scalar::<T>(mixture.channel(0)))?);
    let mut targets = Vec::with_capacity(sources.len() * mix.len());
    for clip in sources {
        let f = log_magnitude(&stft.forward(&to_scalar::<T>(clip.channel(0)))?);
        targets.extend_from_slice(f.data());
    }
    let [bins, frames] = [mix.shape()[0], mix.shape()[1]];
    Ok(Example {
        targets: Tensor::new([sources.len() * bins, frames], targets)?,
        mixture: mix,
    })
}

/// Independent clip indices, one per source.
pub fn draw_indices(pool: &SourcePool, rng: &mut impl Rng) -> Vec<usize> {
    pool.sources.iter().map(|clips| rng.gen_range(0..clips.len())).collect()
}

/// Online remix: one independently drawn sub-clip per source, summed
/// into a new mixture.
pub fn augment_sample<T: Scalar>(
    pool: &SourcePool,
    stft: &Stft<T>,
    rng: &mut impl Rng,
) -> Result<Example<T>, TrainError> {
    let picks: Vec<&AudioClip> = draw_indices(pool, rng)
        .into_iter()
        .zip(&pool.sources)
        .map(|(i, clips)| &clips[i])
        .collect();
    aligned_example(stft, &picks)
}

/// Examples stacked along a leading batch axis.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    /// `(B, F, T)`
    pub mixture: Tensor<T>,
    /// `(B, S * F, T)`
    pub targets: Tensor<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn stack(examples: &[Example<T>]) -> Result<Self, TrainError> {
        let first = examples
            .first()
            .ok_or_else(|| TrainError::Data("empty batch".into()))?;
        let stack = |pick: fn(&Example<T>) -> &Tensor<T>| -> Result<Tensor<T>, TrainError> {
            let shape = pick(first).shape().to_vec();
            let mut data = Vec::with_capacity(examples.len() * pick(first).len());
            for e in examples {
                if pick(e).shape() != shape.as_slice() {
                    return Err(TrainError::Data("examples in a batch differ in shape".into()));
                }
                data.extend_from_slice(pick(e).data());
            }
            Ok(Tensor::new([examples.len(), shape[0], shape[1]], data)?)
        };
        Ok(Self {
            mixture: stack(|e| &e.mixture)?,
            targets: stack(|e| &e.targets)?,
        })
    }

    pub fn len(&self) -> usize {
        self.mixture.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

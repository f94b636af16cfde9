use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::AudioClip;
use crate::io::IoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavFormat {
    #[default]
    Float32,
    Pcm16,
}

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> IoError + '_ {
    move |source| IoError::Wav {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads integer PCM (scaled to [-1, 1)) or 32-bit float WAV files.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, IoError> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path).map_err(wav_err(path))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(IoError::Data(format!("{}: no channels", path.display())));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader.samples::<f32>().collect::<Result<_, _>>().map_err(wav_err(path))?,
        (SampleFormat::Int, bits @ 1..=32) => {
            let scale = (1u64 << (bits - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<Result<_, _>>()
                .map_err(wav_err(path))?
        }
        (format, bits) => {
            return Err(IoError::Data(format!(
                "{}: unsupported sample format {format:?} with {bits} bits",
                path.display()
            )))
        }
    };
    let frames = interleaved.len() / channels;
    let mut data = vec![Vec::with_capacity(frames); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (c, &v) in frame.iter().enumerate() {
            data[c].push(v);
        }
    }
    AudioClip::new(spec.sample_rate, data).map_err(|e| IoError::Data(format!("{}: {e}", path.display())))
}

/// Writes a clip; PCM16 output saturates outside [-1, 1).
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip, format: WavFormat) -> Result<(), IoError> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: clip.num_channels() as u16,
        sample_rate: clip.sample_rate,
        bits_per_sample: match format {
            WavFormat::Float32 => 32,
            WavFormat::Pcm16 => 16,
        },
        sample_format: match format {
            WavFormat::Float32 => SampleFormat::Float,
            WavFormat::Pcm16 => SampleFormat::Int,
        },
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err(path))?;
    for n in 0..clip.len() {
        for c in 0..clip.num_channels() {
            let v = clip.channel(c)[n];
            match format {
                WavFormat::Float32 => writer.write_sample(v).map_err(wav_err(path))?,
                WavFormat::Pcm16 => {
                    let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q).map_err(wav_err(path))?
                }
            }
        }
    }
    writer.finalize().map_err(wav_err(path))
}

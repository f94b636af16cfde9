//! A two-source toy corpus: band-limited noise as accompaniment and a
//! harmonic tone complex as vocals. The two occupy mostly disjoint
//! frequency bands, so a small network can learn to separate them.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use realfft::RealFftPlanner;

use crate::dsp::AudioClip;
use crate::training::Song;

pub const SYNTHETIC_SOURCES: [&str; 2] = ["accompaniment", "vocals"];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub clips: usize,
    pub seconds: f64,
    pub sample_rate: u32,
    /// Pass band of the noise source in Hz.
    pub noise_band: (f64, f64),
    /// Range of the tone's fundamental in Hz.
    pub f0_range: (f64, f64),
    /// Partials above this frequency are left out.
    pub tone_ceiling: f64,
    /// RMS level of each source.
    pub level: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            clips: 20,
            seconds: 5.0,
            sample_rate: 44_100,
            noise_band: (3_000.0, 8_000.0),
            f0_range: (150.0, 300.0),
            tone_ceiling: 2_500.0,
            level: 0.05,
            seed: 0,
        }
    }
}

fn normalize(samples: &mut [f64], level: f64) {
    let rms = (samples.iter().map(|v| v * v).sum::<f64>() / samples.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        samples.iter_mut().for_each(|v| *v *= level / rms);
    }
}

fn band_noise(len: usize, cfg: &SyntheticConfig, rng: &mut impl Rng) -> Vec<f64> {
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(len);
    let ifft = planner.plan_fft_inverse(len);
    let mut signal: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
    let mut spectrum = fft.make_output_vec();
    fft.process(&mut signal, &mut spectrum).expect("buffer sizes match the plan");
    let hz_per_bin = cfg.sample_rate as f64 / len as f64;
    for (k, c) in spectrum.iter_mut().enumerate() {
        let hz = k as f64 * hz_per_bin;
        if hz < cfg.noise_band.0 || hz > cfg.noise_band.1 {
            *c = num_complex::Complex::new(0.0, 0.0);
        }
    }
    let last = spectrum.len() - 1;
    spectrum[0].im = 0.0;
    spectrum[last].im = 0.0;
    ifft.process(&mut spectrum, &mut signal).expect("buffer sizes match the plan");
    normalize(&mut signal, cfg.level);
    signal
}

fn tone(len: usize, cfg: &SyntheticConfig, rng: &mut impl Rng) -> Vec<f64> {
    let sr = cfg.sample_rate as f64;
    let f0 = rng.gen_range(cfg.f0_range.0..cfg.f0_range.1);
    let partials = ((cfg.tone_ceiling / f0).floor() as usize).max(1);
    let phases: Vec<f64> = (0..partials).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let env_rate = rng.gen_range(0.2..1.0);
    let env_phase = rng.gen_range(0.0..2.0 * PI);
    let mut out: Vec<f64> = (0..len)
        .map(|n| {
            let t = n as f64 / sr;
            let env = 0.6 + 0.4 * (2.0 * PI * env_rate * t + env_phase).sin();
            let sum: f64 = phases
                .iter()
                .enumerate()
                .map(|(k, &ph)| (2.0 * PI * (k + 1) as f64 * f0 * t + ph).sin() / (k + 1) as f64)
                .sum();
            env * sum
        })
        .collect();
    normalize(&mut out, cfg.level);
    out
}

/// `cfg.clips` mono songs with stems in [`SYNTHETIC_SOURCES`] order.
pub fn synthetic_songs(cfg: &SyntheticConfig) -> Vec<Song> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let len = (cfg.seconds * cfg.sample_rate as f64).round() as usize;
    (0..cfg.clips)
        .map(|i| {
            let noise = band_noise(len, cfg, &mut rng);
            let voice = tone(len, cfg, &mut rng);
            let stems = [noise, voice]
                .into_iter()
                .map(|s| {
                    AudioClip::mono(cfg.sample_rate, s.into_iter().map(|v| v as f32).collect())
                        .expect("finite samples")
                })
                .collect();
            Song::new(format!("synthetic_{i:02}"), stems).expect("aligned stems")
        })
        .collect()
}

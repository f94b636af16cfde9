use std::fmt::Write as _;
use std::path::Path;

use crate::dsp::StftConfig;
use crate::io::IoError;
use crate::models::ModelConfig;
use crate::training::TrainConfig;

pub const DEFAULT_SOURCES: [&str; 4] = ["drums", "bass", "other", "vocals"];

/// Everything needed to rebuild a run: network, training, STFT and data
/// settings. Serialized as `key=value` lines with dotted keys
/// (`model.norm`, `train.lr_conv`, `stft.hop`, `data.sources`, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub stft: StftConfig,
    /// Stem names, one per model source, in output order.
    pub sources: Vec<String>,
    pub clip_seconds: f64,
    pub train_ratio: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            stft: StftConfig::default(),
            sources: DEFAULT_SOURCES.iter().map(|s| s.to_string()).collect(),
            clip_seconds: 5.0,
            train_ratio: 0.9,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), IoError> {
        self.model.validate()?;
        self.train.validate()?;
        if self.sources.len() != self.model.sources {
            return Err(IoError::Config(format!(
                "data.sources names {} stems but model.sources is {}",
                self.sources.len(),
                self.model.sources
            )));
        }
        if self.stft.bins() != self.model.bins {
            return Err(IoError::Config(format!(
                "stft.window {} gives {} bins but model.bins is {}",
                self.stft.window,
                self.stft.bins(),
                self.model.bins
            )));
        }
        if self.stft.hop == 0 || self.stft.hop > self.stft.window {
            return Err(IoError::Config("stft.hop must lie in 1..=stft.window".into()));
        }
        if self.clip_seconds.is_nan() || self.clip_seconds <= 0.0 {
            return Err(IoError::Config("data.clip_seconds must be positive".into()));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(IoError::Config("data.train_ratio must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Canonical `(key, value)` pairs in a fixed order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .model
            .entries()
            .into_iter()
            .map(|(k, v)| (format!("model.{k}"), v))
            .collect();
        out.push(("stft.window".into(), self.stft.window.to_string()));
        out.push(("stft.hop".into(), self.stft.hop.to_string()));
        out.push(("data.sources".into(), self.sources.join(",")));
        out.push(("data.clip_seconds".into(), format!("{:?}", self.clip_seconds)));
        out.push(("data.train_ratio".into(), format!("{:?}", self.train_ratio)));
        out.extend(self.train.entries().into_iter().map(|(k, v)| (format!("train.{k}"), v)));
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Sets one dotted key. Values are validated as a whole by [`Self::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), IoError> {
        let value = value.trim();
        let bad = || IoError::Config(format!("invalid value `{value}` for {key}"));
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| IoError::Config(format!("key `{key}` needs a section prefix")))?;
        match section {
            "model" => {
                self.model.set(field, value).map_err(|e| IoError::Config(e.to_string()))?;
                // Keep the output layer in step with the source and bin counts.
                if matches!(field, "sources" | "bins") {
                    let out = self.model.output_channels();
                    if let Some(last) = self.model.decoder.last_mut() {
                        last.out_channels = out;
                    }
                }
            }
            "train" => self.train.set(field, value).map_err(|e| IoError::Config(e.to_string()))?,
            "stft" => match field {
                "window" => self.stft.window = value.parse().map_err(|_| bad())?,
                "hop" => self.stft.hop = value.parse().map_err(|_| bad())?,
                _ => return Err(IoError::Config(format!("unknown key {key}"))),
            },
            "data" => match field {
                "sources" => {
                    self.sources = value.split(',').map(|s| s.trim().to_string()).collect();
                    if self.sources.iter().any(String::is_empty) {
                        return Err(bad());
                    }
                }
                "clip_seconds" => self.clip_seconds = value.parse().map_err(|_| bad())?,
                "train_ratio" => self.train_ratio = value.parse().map_err(|_| bad())?,
                _ => return Err(IoError::Config(format!("unknown key {key}"))),
            },
            _ => return Err(IoError::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<(), IoError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| IoError::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, IoError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IoError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        Self::parse(&text)
    }

    /// Number of samples in one training clip at `sample_rate`.
    pub fn clip_len(&self, sample_rate: u32) -> usize {
        (self.clip_seconds * sample_rate as f64).round() as usize
    }
}

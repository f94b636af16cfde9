use std::fmt;

use crate::models::ModelError;
use crate::nn::NormKind;

/// Frequency bins of a 2048-point spectrum.
pub const BINS: usize = 1025;
pub const SOURCES: usize = 4;
pub const LEAKY_SLOPE: f64 = 0.01;

/// `(output channels, kernel, stride)` of one convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl LayerSpec {
    pub const fn new(out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            out_channels,
            kernel,
            stride,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.out_channels, self.kernel, self.stride)
    }
}

/// Formats specs as `c:k:s,c:k:s,...`.
pub fn format_specs(specs: &[LayerSpec]) -> String {
    specs.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
}

pub fn parse_specs(text: &str) -> Result<Vec<LayerSpec>, ModelError> {
    text.split(',')
        .map(|item| {
            let parts: Vec<&str> = item.trim().split(':').collect();
            let nums: Option<Vec<usize>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
            match nums.as_deref() {
                Some(&[c, k, s]) => Ok(LayerSpec::new(c, k, s)),
                _ => Err(ModelError::Parse(format!(
                    "layer spec `{item}` is not out_channels:kernel:stride"
                ))),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SkipKind {
    None,
    Identity,
    Conv,
    Gru,
}

impl SkipKind {
    pub const ALL: [SkipKind; 4] = [SkipKind::None, SkipKind::Identity, SkipKind::Conv, SkipKind::Gru];

    pub fn as_str(self) -> &'static str {
        match self {
            SkipKind::None => "none",
            SkipKind::Identity => "identity",
            SkipKind::Conv => "conv",
            SkipKind::Gru => "gru",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

/// Where recurrent layers sit. `Skips` means inside GRU skip connections
/// (only meaningful with [`SkipKind::Gru`]); `AfterTconv4` adds a GRU on
/// the first decoder layer's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Recurrence {
    Skips,
    AfterTconv4,
    None,
}

impl Recurrence {
    pub fn as_str(self) -> &'static str {
        match self {
            Recurrence::Skips => "skips",
            Recurrence::AfterTconv4 => "after_tconv4",
            Recurrence::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Recurrence::Skips, Recurrence::AfterTconv4, Recurrence::None]
            .into_iter()
            .find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResidualConfig {
    pub iterations: usize,
}

impl ResidualConfig {
    pub const CANONICAL_ITERATIONS: usize = 3;
}

impl Default for ResidualConfig {
    fn default() -> Self {
        Self {
            iterations: Self::CANONICAL_ITERATIONS,
        }
    }
}

/// Architecture of one encoder/decoder network.
///
/// Encoder output `i` (1-based, `i` in 1..=2) is merged by addition into
/// the input of decoder layer `3 - i` (0-based), i.e. the mirrored layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    pub skip_kind: SkipKind,
    pub recurrence: Recurrence,
    pub norm: NormKind,
    /// Frequency bins per source block.
    pub bins: usize,
    pub sources: usize,
    pub leaky_slope: f64,
    /// When set, the network input is the mixture concatenated with the
    /// previous running total, and it is applied iteratively.
    pub residual: Option<ResidualConfig>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::with_channels(BINS, SOURCES, [512, 256, 128])
    }
}

impl ModelConfig {
    /// Three-level pyramid with the given encoder channels; the decoder
    /// mirrors it and ends in `sources * bins` channels.
    pub fn with_channels(bins: usize, sources: usize, channels: [usize; 3]) -> Self {
        let [c1, c2, c3] = channels;
        Self {
            encoder: vec![LayerSpec::new(c1, 5, 2), LayerSpec::new(c2, 5, 2), LayerSpec::new(c3, 3, 2)],
            decoder: vec![
                LayerSpec::new(c2, 3, 2),
                LayerSpec::new(c1, 5, 2),
                LayerSpec::new(sources * bins, 5, 2),
            ],
            skip_kind: SkipKind::Gru,
            recurrence: Recurrence::Skips,
            norm: NormKind::WeightNorm,
            bins,
            sources,
            leaky_slope: LEAKY_SLOPE,
            residual: None,
        }
    }

    /// Per-source enhancement network sharing this config's pyramid, with
    /// convolutional skips and `bins` input and output channels.
    pub fn enhancer(&self) -> Self {
        let mut cfg = self.clone();
        cfg.sources = 1;
        cfg.skip_kind = SkipKind::Conv;
        cfg.recurrence = Recurrence::None;
        cfg.residual = None;
        if let Some(last) = cfg.decoder.last_mut() {
            last.out_channels = cfg.bins;
        }
        cfg
    }

    pub fn input_channels(&self) -> usize {
        match self.residual {
            Some(_) => self.bins + self.sources * self.bins,
            None => self.bins,
        }
    }

    pub fn output_channels(&self) -> usize {
        self.sources * self.bins
    }

    pub fn iterations(&self) -> usize {
        self.residual.map_or(1, |r| r.iterations)
    }

    /// Decoder-input channels at the merge point of encoder output `i`.
    pub(crate) fn skip_target_channels(&self, i: usize) -> usize {
        self.decoder[2 - i].out_channels
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |layer: String, reason: String| Err(ModelError::Config { layer, reason });
        if self.encoder.len() != 3 {
            return err("encoder".into(), format!("expected 3 layers, got {}", self.encoder.len()));
        }
        if self.decoder.len() != 3 {
            return err("decoder".into(), format!("expected 3 layers, got {}", self.decoder.len()));
        }
        if self.bins == 0 || self.sources == 0 {
            return err("io".into(), "bins and sources must be positive".into());
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return err("activation".into(), format!("leaky slope {}", self.leaky_slope));
        }
        for (name, specs) in [("enc", &self.encoder), ("dec", &self.decoder)] {
            for (i, s) in specs.iter().enumerate() {
                if s.out_channels == 0 || s.kernel == 0 || s.stride == 0 {
                    return err(format!("{name}.{i}"), format!("non-positive field in {s}"));
                }
            }
        }
        for j in 0..3 {
            let (d, e) = (self.decoder[j].stride, self.encoder[2 - j].stride);
            if d != e {
                return err(
                    format!("dec.{j}"),
                    format!("stride {d} does not mirror enc.{} stride {e}", 2 - j),
                );
            }
        }
        let out = self.decoder[2].out_channels;
        if out != self.output_channels() {
            return err(
                "dec.2".into(),
                format!(
                    "output channels {out} != sources x bins = {}",
                    self.output_channels()
                ),
            );
        }
        if self.skip_kind == SkipKind::Identity {
            for i in 1..=2 {
                let (from, to) = (self.encoder[i - 1].out_channels, self.skip_target_channels(i));
                if from != to {
                    return err(
                        format!("skip.{i}"),
                        format!("identity skip joins {from} channels into {to}"),
                    );
                }
            }
        }
        if self.skip_kind == SkipKind::Gru && self.recurrence == Recurrence::None {
            return err("skip".into(), "gru skips contradict recurrence `none`".into());
        }
        if let Some(r) = self.residual {
            if r.iterations == 0 {
                return err("residual".into(), "iteration count must be at least 1".into());
            }
        }
        Ok(())
    }

    /// Canonical `key=value` pairs, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("encoder", format_specs(&self.encoder)),
            ("decoder", format_specs(&self.decoder)),
            ("skip_kind", self.skip_kind.as_str().into()),
            ("recurrence", self.recurrence.as_str().into()),
            ("norm", self.norm.as_str().into()),
            ("bins", self.bins.to_string()),
            ("sources", self.sources.to_string()),
            ("leaky_slope", format!("{:?}", self.leaky_slope)),
            (
                "residual_iterations",
                self.residual.map_or(0, |r| r.iterations).to_string(),
            ),
        ]
    }

    /// Sets one field from its textual form; `residual_iterations = 0`
    /// disables residual mode and `channels = c1,c2,c3` rebuilds the
    /// default pyramid for the current bins and sources.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ModelError> {
        let bad = || ModelError::Parse(format!("invalid value `{value}` for model.{key}"));
        let int = || value.trim().parse::<usize>().map_err(|_| bad());
        match key {
            "encoder" => self.encoder = parse_specs(value)?,
            "decoder" => self.decoder = parse_specs(value)?,
            "channels" => {
                let list: Option<Vec<usize>> = value.split(',').map(|c| c.trim().parse().ok()).collect();
                let Some(&[c1, c2, c3]) = list.as_deref() else {
                    return Err(bad());
                };
                let base = Self::with_channels(self.bins, self.sources, [c1, c2, c3]);
                self.encoder = base.encoder;
                self.decoder = base.decoder;
            }
            "skip_kind" => self.skip_kind = SkipKind::parse(value).ok_or_else(bad)?,
            "recurrence" => self.recurrence = Recurrence::parse(value).ok_or_else(bad)?,
            "norm" => self.norm = NormKind::parse(value).ok_or_else(bad)?,
            "bins" => self.bins = int()?,
            "sources" => self.sources = int()?,
            "leaky_slope" => self.leaky_slope = value.trim().parse().map_err(|_| bad())?,
            "residual_iterations" => {
                let n = int()?;
                self.residual = (n > 0).then_some(ResidualConfig { iterations: n });
            }
            _ => return Err(ModelError::Parse(format!("unknown key model.{key}"))),
        }
        Ok(())
    }
}

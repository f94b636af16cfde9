use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::models::{ModelConfig, ModelError, Recurrence, SkipKind};
use crate::nn::{BatchNorm, ConvLayer, GruLayer, Mode, NormKind, ParamStore};
use crate::scalar::Scalar;

/// Spacing of the grid residual outputs are rounded to: 2^10 machine
/// epsilons. Sums of grid values below 2^11 in magnitude are exact, so
/// each total differs from the previous one by exactly its residual.
pub fn residual_grid<T: Scalar>() -> f64 {
    T::epsilon().to_f64().unwrap_or(f64::EPSILON) * 1024.0
}

#[derive(Debug)]
enum Skip<T> {
    None,
    Identity,
    Conv(ConvLayer<T>),
    Gru(GruLayer),
}

/// Graph handles of one (possibly iterated) prediction.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// Running totals after each iteration; a single entry outside
    /// residual mode.
    pub totals: Vec<Var>,
    /// Network outputs of each iteration.
    pub residuals: Vec<Var>,
}

impl Prediction {
    pub fn output(&self) -> Var {
        *self.totals.last().expect("at least one iteration")
    }
}

/// Encoder/decoder network with its parameters.
#[derive(Debug)]
pub struct Separator<T: Scalar> {
    config: ModelConfig,
    store: ParamStore<T>,
    encoder: Vec<ConvLayer<T>>,
    decoder: Vec<ConvLayer<T>>,
    /// `skips[i - 1]` carries encoder output `i`.
    skips: Vec<Skip<T>>,
    recurrent: Option<GruLayer>,
}

impl<T: Scalar> Separator<T> {
    /// Builds the network with weights drawn from a generator seeded by `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let norm = config.norm;
        // The output layer and projections are never batch-normalized.
        let plain = if norm == NormKind::BatchNorm {
            NormKind::None
        } else {
            norm
        };

        let mut in_ch = config.input_channels();
        let mut encoder = Vec::new();
        for (i, s) in config.encoder.iter().enumerate() {
            encoder.push(ConvLayer::new(
                &mut store,
                &format!("enc.{i}"),
                in_ch,
                s.out_channels,
                s.kernel,
                s.stride,
                false,
                norm,
                &mut rng,
            ));
            in_ch = s.out_channels;
        }
        let mut decoder = Vec::new();
        for (j, s) in config.decoder.iter().enumerate() {
            let layer_norm = if j == 2 { plain } else { norm };
            decoder.push(ConvLayer::new(
                &mut store,
                &format!("dec.{j}"),
                in_ch,
                s.out_channels,
                s.kernel,
                s.stride,
                true,
                layer_norm,
                &mut rng,
            ));
            in_ch = s.out_channels;
        }
        let recurrent = (config.recurrence == Recurrence::AfterTconv4).then(|| {
            let ch = config.decoder[0].out_channels;
            GruLayer::new(&mut store, "rec", ch, ch, &mut rng)
        });
        let mut skips = Vec::new();
        for i in 1..=2 {
            let from = config.encoder[i - 1].out_channels;
            let to = config.skip_target_channels(i);
            let prefix = format!("skip.{i}");
            skips.push(match config.skip_kind {
                SkipKind::None => Skip::None,
                SkipKind::Identity => Skip::Identity,
                SkipKind::Conv => Skip::Conv(ConvLayer::new(
                    &mut store, &prefix, from, to, 1, 1, false, plain, &mut rng,
                )),
                SkipKind::Gru => Skip::Gru(GruLayer::new(&mut store, &prefix, from, to, &mut rng)),
            });
        }
        Ok(Self {
            config,
            store,
            encoder,
            decoder,
            skips,
            recurrent,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn num_params(&self) -> usize {
        self.store.num_elements()
    }

    /// Batch-norm layers with their parameter prefixes, in construction order.
    pub fn batch_norms(&self) -> Vec<(String, &BatchNorm<T>)> {
        let enc = self.encoder.iter().enumerate().map(|(i, l)| (format!("enc.{i}.bn"), l));
        let dec = self.decoder.iter().enumerate().map(|(j, l)| (format!("dec.{j}.bn"), l));
        enc.chain(dec)
            .filter_map(|(name, l)| l.batch_norm.as_ref().map(|bn| (name, bn)))
            .collect()
    }

    fn activate(&self, tape: &mut Tape<T>, x: Var) -> Var {
        tape.leaky_relu(x, self.config.leaky_slope)
    }

    fn merge_skip(&self, tape: &mut Tape<T>, i: usize, d: Var, e: Var, mode: Mode) -> Result<Var, ModelError> {
        let s = match &self.skips[i - 1] {
            Skip::None => return Ok(d),
            Skip::Identity => e,
            Skip::Conv(layer) => {
                let y = layer.forward(&self.store, tape, e, mode, None)?;
                self.activate(tape, y)
            }
            Skip::Gru(layer) => layer.forward(&self.store, tape, e)?,
        };
        Ok(tape.add(d, s)?)
    }

    /// One pass of the network on `(B, input_channels, T)`, giving
    /// `(B, sources * bins, T)`.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var, ModelError> {
        let shape = tape.shape(x).to_vec();
        let expected = self.config.input_channels();
        if shape.len() != 3 || shape[1] != expected {
            return Err(ModelError::WrongInput {
                expected,
                got: shape,
            });
        }
        let mut lengths = vec![shape[2]];
        let mut outs = Vec::new();
        let mut h = x;
        for layer in &self.encoder {
            let y = layer.forward(&self.store, tape, h, mode, None)?;
            h = self.activate(tape, y);
            lengths.push(tape.shape(h)[2]);
            outs.push(h);
        }
        for (j, layer) in self.decoder.iter().enumerate() {
            if j > 0 {
                let i = 3 - j;
                h = self.merge_skip(tape, i, h, outs[i - 1], mode)?;
            }
            let y = layer.forward(&self.store, tape, h, mode, Some(lengths[2 - j]))?;
            h = self.activate(tape, y);
            if j == 0 {
                if let Some(rec) = &self.recurrent {
                    h = rec.forward(&self.store, tape, h)?;
                }
            }
        }
        Ok(h)
    }

    /// Full prediction from mixture features `(B, bins, T)`. In residual
    /// mode the network sees the mixture concatenated with the previous
    /// total (zeros at first) and its output, rounded to
    /// [`residual_grid`], is added to that total.
    pub fn predict(&self, tape: &mut Tape<T>, mixture: Var, mode: Mode) -> Result<Prediction, ModelError> {
        let shape = tape.shape(mixture).to_vec();
        if shape.len() != 3 || shape[1] != self.config.bins {
            return Err(ModelError::WrongInput {
                expected: self.config.bins,
                got: shape,
            });
        }
        if self.config.residual.is_none() {
            let out = self.forward(tape, mixture, mode)?;
            return Ok(Prediction {
                totals: vec![out],
                residuals: vec![out],
            });
        }
        let mut total = tape.constant(Tensor::zeros([shape[0], self.config.output_channels(), shape[2]]));
        let mut prediction = Prediction {
            totals: Vec::new(),
            residuals: Vec::new(),
        };
        for _ in 0..self.config.iterations() {
            let input = tape.concat(&[mixture, total], 1)?;
            let raw = self.forward(tape, input, mode)?;
            let residual = tape.quantize(raw, residual_grid::<T>());
            total = tape.add(total, residual)?;
            prediction.residuals.push(residual);
            prediction.totals.push(total);
        }
        Ok(prediction)
    }

    /// Eval-mode inference on a batch `(B, bins, T)` without gradient
    /// tracking; returns the final `(B, sources * bins, T)` estimate.
    pub fn infer(&self, features: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::inference();
        let x = tape.constant(features.detached());
        let p = self.predict(&mut tape, x, Mode::Eval)?;
        Ok(tape.value(p.output()).detached())
    }

    /// Separates one clip's mixture features `(bins, T)` into per-source
    /// features `(sources, bins, T)`.
    pub fn separate(&self, features: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let shape = features.shape().to_vec();
        if shape.len() != 2 || shape[0] != self.config.bins {
            return Err(ModelError::WrongInput {
                expected: self.config.bins,
                got: shape,
            });
        }
        let out = self.infer(&features.detached().reshape([1, shape[0], shape[1]])?)?;
        Ok(out.reshape([self.config.sources, self.config.bins, shape[1]])?)
    }
}

use crate::autodiff::{Tape, Tensor, Var};
use crate::models::{ModelConfig, ModelError, Separator};
use crate::nn::Mode;
use crate::scalar::Scalar;

/// One enhancement network per source, each refining that source's block
/// of the separator output.
#[derive(Debug)]
pub struct EnhancerSet<T: Scalar> {
    models: Vec<Separator<T>>,
}

impl<T: Scalar> EnhancerSet<T> {
    /// Builds `separator.sources` enhancers; enhancer `s` is seeded with
    /// `seed + s`.
    pub fn new(separator: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let cfg = separator.enhancer();
        let models = (0..separator.sources)
            .map(|s| Separator::new(cfg.clone(), seed.wrapping_add(s as u64)))
            .collect::<Result<_, _>>()?;
        Ok(Self { models })
    }

    pub fn from_models(models: Vec<Separator<T>>) -> Result<Self, ModelError> {
        if let Some(m) = models.iter().find(|m| m.config().sources != 1) {
            return Err(ModelError::Config {
                layer: "enhancer".into(),
                reason: format!("enhancer must have one source, has {}", m.config().sources),
            });
        }
        Ok(Self { models })
    }

    pub fn models(&self) -> &[Separator<T>] {
        &self.models
    }

    pub fn models_mut(&mut self) -> &mut [Separator<T>] {
        &mut self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn bins(&self) -> usize {
        self.models.first().map_or(0, |m| m.config().bins)
    }

    /// `(B, S * bins, T)` separator features in, enhanced features of the
    /// same shape out.
    pub fn forward(&self, tape: &mut Tape<T>, separated: Var, mode: Mode) -> Result<Var, ModelError> {
        let bins = self.bins();
        let shape = tape.shape(separated).to_vec();
        if shape.len() != 3 || shape[1] != bins * self.models.len() {
            return Err(ModelError::WrongInput {
                expected: bins * self.models.len(),
                got: shape,
            });
        }
        let mut parts = Vec::with_capacity(self.models.len());
        for (s, model) in self.models.iter().enumerate() {
            let block = tape.narrow(separated, 1, s * bins, bins)?;
            parts.push(model.forward(tape, block, mode)?);
        }
        Ok(tape.concat(&parts, 1)?)
    }

    pub fn infer(&self, separated: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::inference();
        let x = tape.constant(separated.detached());
        let y = self.forward(&mut tape, x, Mode::Eval)?;
        Ok(tape.value(y).detached())
    }
}

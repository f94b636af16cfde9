use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::dsp::Stft;
use crate::models::{EnhancerSet, Separator};
use crate::nn::{AdamConfig, AdamState, Mode, ParamStore, RunningStats};
use crate::scalar::Scalar;
use crate::training::{augment_sample, mse_loss, Batch, Example, SourcePool, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Separator,
    Enhancer,
    Residual,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Separator => "separator",
            TrainMode::Enhancer => "enhancer",
            TrainMode::Residual => "residual",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [TrainMode::Separator, TrainMode::Enhancer, TrainMode::Residual]
            .into_iter()
            .find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    /// Augmented batches per epoch; validation runs after each epoch.
    pub steps_per_epoch: usize,
    /// Validations without improvement before stopping.
    pub patience: usize,
    /// Overall step budget, `None` for unlimited.
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            adam: AdamConfig::default(),
            max_epochs: 100,
            steps_per_epoch: 100,
            patience: 10,
            max_steps: None,
            seed: 0,
            mode: TrainMode::Separator,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |what: &str| Err(TrainError::Config(what.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.steps_per_epoch == 0 || self.max_epochs == 0 {
            return bad("steps_per_epoch and max_epochs must be at least 1");
        }
        let a = &self.adam;
        if !(a.lr_conv > 0.0 && a.lr_gru > 0.0 && a.eps > 0.0) {
            return bad("learning rates and epsilon must be positive");
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return bad("Adam betas must lie in [0, 1)");
        }
        Ok(())
    }

    /// Canonical `key=value` pairs, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("mode", self.mode.as_str().into()),
            ("batch_size", self.batch_size.to_string()),
            ("lr_conv", format!("{:?}", self.adam.lr_conv)),
            ("lr_gru", format!("{:?}", self.adam.lr_gru)),
            (
                "clip_gru",
                self.adam.clip_gru.map_or_else(|| "none".into(), |c| format!("{c:?}")),
            ),
            ("max_epochs", self.max_epochs.to_string()),
            ("steps_per_epoch", self.steps_per_epoch.to_string()),
            ("patience", self.patience.to_string()),
            ("max_steps", self.max_steps.unwrap_or(0).to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Sets one field from text; `max_steps = 0` means unlimited.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        let bad = || TrainError::Config(format!("invalid value `{value}` for train.{key}"));
        let v = value.trim();
        match key {
            "mode" => self.mode = TrainMode::parse(v).ok_or_else(bad)?,
            "batch_size" => self.batch_size = v.parse().map_err(|_| bad())?,
            "lr_conv" => self.adam.lr_conv = v.parse().map_err(|_| bad())?,
            "lr_gru" => self.adam.lr_gru = v.parse().map_err(|_| bad())?,
            "clip_gru" => {
                self.adam.clip_gru = match v {
                    "none" => None,
                    _ => Some(v.parse().map_err(|_| bad())?),
                }
            }
            "max_epochs" => self.max_epochs = v.parse().map_err(|_| bad())?,
            "steps_per_epoch" => self.steps_per_epoch = v.parse().map_err(|_| bad())?,
            "patience" => self.patience = v.parse().map_err(|_| bad())?,
            "max_steps" => {
                let n: u64 = v.parse().map_err(|_| bad())?;
                self.max_steps = (n > 0).then_some(n);
            }
            "seed" => self.seed = v.parse().map_err(|_| bad())?,
            _ => return Err(TrainError::Config(format!("unknown key train.{key}"))),
        }
        Ok(())
    }
}

/// Loss of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub step: u64,
    /// The optimized objective; the mean of `iteration_losses` in residual mode.
    pub loss: f64,
    pub iteration_losses: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub train_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
    pub best_validation: f64,
    /// Optimizer steps taken when the best validation loss was seen.
    pub best_step: u64,
    pub steps: u64,
    pub epochs: usize,
    pub stopped_early: bool,
}

/// Parameter values, batch-norm statistics and optimizer state of one model.
#[derive(Debug, Clone)]
pub struct ModelSnapshot<T> {
    values: Vec<Vec<T>>,
    running: Vec<RunningStats<T>>,
    adam: AdamState<T>,
}

impl<T: Scalar> ModelSnapshot<T> {
    pub fn capture(model: &Separator<T>, adam: &AdamState<T>) -> Self {
        Self {
            values: model.store().iter().map(|p| p.tensor.data().to_vec()).collect(),
            running: model.batch_norms().iter().map(|(_, bn)| bn.running()).collect(),
            adam: adam.clone(),
        }
    }

    pub fn restore(&self, model: &mut Separator<T>, adam: &mut AdamState<T>) {
        for (p, v) in model.store_mut().iter_mut().zip(&self.values) {
            p.tensor.data_mut().copy_from_slice(v);
        }
        for ((_, bn), stats) in model.batch_norms().iter().zip(&self.running) {
            bn.set_running(stats.clone());
        }
        *adam = self.adam.clone();
    }
}

/// Something the generic loop can optimize and validate.
pub trait Objective<T: Scalar> {
    fn step(&mut self, batch: &Batch<T>, step: u64) -> Result<StepStats, TrainError>;
    /// Mean loss over one batch, in evaluation mode.
    fn validate(&self, batch: &Batch<T>) -> Result<f64, TrainError>;
    fn snapshot(&self) -> Vec<ModelSnapshot<T>>;
    fn restore(&mut self, snapshot: &[ModelSnapshot<T>]);
}

fn average_losses<T: Scalar>(tape: &mut Tape<T>, losses: &[Var]) -> Var {
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = tape.add(total, l).expect("scalar losses");
    }
    if losses.len() == 1 {
        total
    } else {
        tape.div_scalar(total, T::lit(losses.len() as f64))
    }
}

fn scalar<T: Scalar>(tape: &Tape<T>, v: Var) -> f64 {
    tape.item(v).expect("scalar").to_f64_lossy()
}

/// Separator training, plain or residual.
#[derive(Debug)]
pub struct SeparatorObjective<T: Scalar> {
    pub model: Separator<T>,
    pub adam: AdamState<T>,
}

fn check_finite<T: Scalar>(store: &ParamStore<T>, step: u64) -> Result<(), TrainError> {
    match store.first_non_finite() {
        Some(param) => Err(TrainError::NonFiniteParameter {
            step,
            param: param.to_string(),
        }),
        None => Ok(()),
    }
}

impl<T: Scalar> SeparatorObjective<T> {
    pub fn new(model: Separator<T>, adam: AdamConfig) -> Self {
        let adam = AdamState::new(adam, model.store());
        Self { model, adam }
    }
}

impl<T: Scalar> Objective<T> for SeparatorObjective<T> {
    fn step(&mut self, batch: &Batch<T>, step: u64) -> Result<StepStats, TrainError> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.mixture.clone());
        let t = tape.constant(batch.targets.clone());
        let prediction = self.model.predict(&mut tape, x, Mode::Train)?;
        let losses = prediction
            .totals
            .iter()
            .map(|&y| mse_loss(&mut tape, y, t))
            .collect::<Result<Vec<_>, _>>()?;
        let loss = average_losses(&mut tape, &losses);
        let stats = StepStats {
            step,
            loss: scalar(&tape, loss),
            iteration_losses: losses.iter().map(|&l| scalar(&tape, l)).collect(),
        };
        if !stats.loss.is_finite() {
            return Err(TrainError::Diverged { step, loss: stats.loss });
        }
        let grads = tape.backward(loss)?;
        let store = self.model.store_mut();
        store.zero_grad();
        store.accumulate(&grads)?;
        self.adam.step(store)?;
        check_finite(store, step)?;
        Ok(stats)
    }

    fn validate(&self, batch: &Batch<T>) -> Result<f64, TrainError> {
        let pred = self.model.infer(&batch.mixture)?;
        batch_mse(&pred, &batch.targets)
    }

    fn snapshot(&self) -> Vec<ModelSnapshot<T>> {
        vec![ModelSnapshot::capture(&self.model, &self.adam)]
    }

    fn restore(&mut self, snapshot: &[ModelSnapshot<T>]) {
        snapshot[0].restore(&mut self.model, &mut self.adam);
    }
}

/// Per-source enhancers trained on the output of a frozen separator.
#[derive(Debug)]
pub struct EnhancerObjective<T: Scalar> {
    pub separator: Separator<T>,
    pub enhancers: EnhancerSet<T>,
    pub adam: Vec<AdamState<T>>,
}

impl<T: Scalar> EnhancerObjective<T> {
    pub fn new(mut separator: Separator<T>, enhancers: EnhancerSet<T>, adam: AdamConfig) -> Self {
        separator.store_mut().set_frozen(true);
        let adam = enhancers
            .models()
            .iter()
            .map(|m| AdamState::new(adam, m.store()))
            .collect();
        Self {
            separator,
            enhancers,
            adam,
        }
    }
}

impl<T: Scalar> Objective<T> for EnhancerObjective<T> {
    fn step(&mut self, batch: &Batch<T>, step: u64) -> Result<StepStats, TrainError> {
        let separated = self.separator.infer(&batch.mixture)?;
        let mut tape = Tape::new();
        let x = tape.constant(separated);
        let t = tape.constant(batch.targets.clone());
        let y = self.enhancers.forward(&mut tape, x, Mode::Train)?;
        let loss = mse_loss(&mut tape, y, t)?;
        let value = scalar(&tape, loss);
        if !value.is_finite() {
            return Err(TrainError::Diverged { step, loss: value });
        }
        let grads = tape.backward(loss)?;
        for (model, adam) in self.enhancers.models_mut().iter_mut().zip(&mut self.adam) {
            let store = model.store_mut();
            store.zero_grad();
            store.accumulate(&grads)?;
            adam.step(store)?;
            check_finite(store, step)?;
        }
        Ok(StepStats {
            step,
            loss: value,
            iteration_losses: vec![value],
        })
    }

    fn validate(&self, batch: &Batch<T>) -> Result<f64, TrainError> {
        let pred = self.enhancers.infer(&self.separator.infer(&batch.mixture)?)?;
        batch_mse(&pred, &batch.targets)
    }

    fn snapshot(&self) -> Vec<ModelSnapshot<T>> {
        self.enhancers
            .models()
            .iter()
            .zip(&self.adam)
            .map(|(m, a)| ModelSnapshot::capture(m, a))
            .collect()
    }

    fn restore(&mut self, snapshot: &[ModelSnapshot<T>]) {
        for ((m, a), s) in self.enhancers.models_mut().iter_mut().zip(&mut self.adam).zip(snapshot) {
            s.restore(m, a);
        }
    }
}

/// Mean squared difference of two equally shaped tensors, in `f64`.
pub fn batch_mse<T: Scalar>(pred: &crate::autodiff::Tensor<T>, targets: &crate::autodiff::Tensor<T>) -> Result<f64, TrainError> {
    if pred.shape() != targets.shape() {
        return Err(TrainError::Data(format!(
            "prediction {:?} and targets {:?} differ in shape",
            pred.shape(),
            targets.shape()
        )));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&p, &t)| (p - t).to_f64_lossy().powi(2))
        .sum();
    Ok(sum / pred.len().max(1) as f64)
}

/// Stacks examples into batches of at most `batch_size`.
pub fn batches<T: Scalar>(examples: &[Example<T>], batch_size: usize) -> Result<Vec<Batch<T>>, TrainError> {
    examples.chunks(batch_size.max(1)).map(Batch::stack).collect()
}

/// Example-weighted mean validation loss.
pub fn validation_loss<T: Scalar, O: Objective<T> + ?Sized>(
    objective: &O,
    batches: &[Batch<T>],
) -> Result<f64, TrainError> {
    let (mut sum, mut count) = (0.0, 0usize);
    for b in batches {
        sum += objective.validate(b)? * b.len() as f64;
        count += b.len();
    }
    if count == 0 {
        return Err(TrainError::Data("empty validation set".into()));
    }
    Ok(sum / count as f64)
}

/// The training loop: augmented batches, one optimizer step each,
/// validation after every epoch, early stopping on `patience` validations
/// without improvement. The best-validating state is restored on return,
/// also when training diverges.
pub fn fit<T: Scalar, O: Objective<T>>(
    objective: &mut O,
    pool: &SourcePool,
    validation: &[Example<T>],
    stft: &Stft<T>,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    let val_batches = batches(validation, cfg.batch_size)?;
    if val_batches.is_empty() {
        return Err(TrainError::Data("empty validation set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport {
        best_validation: f64::INFINITY,
        ..TrainReport::default()
    };
    let mut best: Option<Vec<ModelSnapshot<T>>> = None;
    let mut stale = 0;
    'epochs: for epoch in 0..cfg.max_epochs {
        let mut ran = 0;
        for _ in 0..cfg.steps_per_epoch {
            if cfg.max_steps.is_some_and(|m| report.steps >= m) {
                break;
            }
            let examples = (0..cfg.batch_size)
                .map(|_| augment_sample(pool, stft, &mut rng))
                .collect::<Result<Vec<_>, _>>()?;
            let batch = Batch::stack(&examples)?;
            let stats = match objective.step(&batch, report.steps) {
                Ok(s) => s,
                Err(e) => {
                    if let Some(b) = &best {
                        objective.restore(b);
                    }
                    return Err(e);
                }
            };
            report.train_losses.push(stats.loss);
            report.steps += 1;
            ran += 1;
        }
        if ran == 0 {
            break;
        }
        report.epochs = epoch + 1;
        let val = validation_loss(objective, &val_batches)?;
        report.validation_losses.push(val);
        log::info!(
            "epoch {} step {} train {:.6} validation {:.6}",
            epoch + 1,
            report.steps,
            report.train_losses.last().copied().unwrap_or(f64::NAN),
            val
        );
        if val < report.best_validation {
            report.best_validation = val;
            report.best_step = report.steps;
            best = Some(objective.snapshot());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                report.stopped_early = true;
                break 'epochs;
            }
        }
    }
    if let Some(b) = &best {
        objective.restore(b);
    }
    Ok(report)
}

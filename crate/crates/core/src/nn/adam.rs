//! Adam with per-group learning rates and optional per-group gradient
//! clipping.

use crate::autodiff::{Result, TensorError};
use crate::nn::param::{ParamGroup, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr_conv: f64,
    pub lr_gru: f64,
    /// Global-norm clip applied to the recurrent group only.
    pub clip_gru: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_conv: 1e-3,
            lr_gru: 1e-4,
            clip_gru: Some(5.0),
        }
    }
}

impl AdamConfig {
    pub fn lr(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Conv => self.lr_conv,
            ParamGroup::Gru => self.lr_gru,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    /// First and second moments, one pair per parameter in store order.
    pub moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let moments = store
            .iter()
            .map(|p| (vec![T::zero(); p.tensor.len()], vec![T::zero(); p.tensor.len()]))
            .collect();
        Self {
            config,
            step: 0,
            moments,
        }
    }

    fn clip_factor(&self, store: &ParamStore<T>, group: ParamGroup, limit: f64) -> T {
        let sq: f64 = store
            .iter()
            .filter(|p| p.group == group)
            .filter_map(|p| p.tensor.grad())
            .flat_map(|g| g.iter().map(|v| v.to_f64_lossy().powi(2)))
            .sum();
        let norm = sq.sqrt();
        if norm > limit {
            T::lit(limit / norm)
        } else {
            T::one()
        }
    }

    /// One update from the gradients held in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if self.moments.len() != store.len() {
            return Err(TensorError::Invalid(format!(
                "optimizer tracks {} parameters, store has {}",
                self.moments.len(),
                store.len()
            )));
        }
        if let Some(p) = store.iter().find(|p| p.tensor.grad().is_none()) {
            return Err(TensorError::MissingGrad(p.name.clone()));
        }
        let cfg = self.config;
        let gru_scale = match cfg.clip_gru {
            Some(limit) => self.clip_factor(store, ParamGroup::Gru, limit),
            None => T::one(),
        };
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        let eps = T::lit(cfg.eps);
        let one = T::one();

        for (p, (m, v)) in store.iter_mut().zip(&mut self.moments) {
            let lr = T::lit(cfg.lr(p.group));
            let scale = if p.group == ParamGroup::Gru { gru_scale } else { one };
            let grad = p.tensor.grad().expect("checked above").to_vec();
            let data = p.tensor.data_mut();
            for i in 0..data.len() {
                let g = grad[i] * scale;
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

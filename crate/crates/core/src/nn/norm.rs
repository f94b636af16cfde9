//! Weight normalization and batch normalization.

use std::sync::Mutex;

use crate::autodiff::{BackwardCtx, BackwardRule, Result, Tape, Tensor, TensorError, Var};
use crate::nn::param::{ParamGroup, ParamId, ParamStore};
use crate::nn::Mode;
use crate::scalar::Scalar;

struct WeightNormRule<T> {
    norms: Vec<T>,
}

impl<T: Scalar> BackwardRule<T> for WeightNormRule<T> {
    fn name(&self) -> &'static str {
        "weight_norm"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let v = ctx.input(0).data();
        let scale = ctx.input(1).data();
        let rows = self.norms.len();
        let width = v.len() / rows;
        let mut dv = vec![T::zero(); v.len()];
        let mut dg = vec![T::zero(); rows];
        for r in 0..rows {
            let vr = &v[r * width..][..width];
            let gr = &g[r * width..][..width];
            let n = self.norms[r];
            let dot: T = vr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
            dg[r] = dot / n;
            let coef = scale[r] / n;
            let proj = dot / (n * n);
            for ((d, &gv), &vv) in dv[r * width..][..width].iter_mut().zip(gr).zip(vr) {
                *d = coef * (gv - proj * vv);
            }
        }
        Ok(vec![Some(dv), Some(dg)])
    }
}

/// `w[r, ..] = g[r] * v[r, ..] / ||v[r, ..]||`, one row per leading index.
pub fn weight_norm<T: Scalar>(tape: &mut Tape<T>, v: Var, g: Var) -> Result<Var> {
    let shape = tape.shape(v).to_vec();
    let rows = *shape.first().ok_or_else(|| TensorError::BadRank {
        op: "weight_norm",
        expected: 2,
        shape: shape.clone(),
    })?;
    if tape.shape(g) != [rows] {
        return Err(TensorError::ShapeMismatch {
            op: "weight_norm",
            lhs: shape,
            rhs: tape.shape(g).to_vec(),
        });
    }
    let vd = tape.value(v).data();
    let gd = tape.value(g).data();
    let width = vd.len() / rows;
    let mut norms = Vec::with_capacity(rows);
    let mut out = Vec::with_capacity(vd.len());
    for r in 0..rows {
        let row = &vd[r * width..][..width];
        let mut n = row.iter().map(|&x| x * x).sum::<T>().sqrt();
        if n.is_infinite() {
            // Squares overflowed; rescale by the largest entry.
            let m = row.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
            n = m * row.iter().map(|&x| (x / m) * (x / m)).sum::<T>().sqrt();
        }
        if n <= T::zero() || !n.is_finite() {
            return Err(TensorError::Invalid(format!(
                "weight_norm: direction row {r} has norm {n}"
            )));
        }
        let c = gd[r] / n;
        out.extend(row.iter().map(|&x| c * x));
        norms.push(n);
    }
    let value = Tensor::new(shape, out)?;
    Ok(tape.push_op(value, vec![v, g], Box::new(WeightNormRule { norms })))
}

fn channel_dims(shape: &[usize], channels: usize) -> Result<(usize, usize)> {
    match *shape {
        [b, c, t] if c == channels => Ok((b, t)),
        [_, c, _] => Err(TensorError::ChannelMismatch {
            op: "batch_norm",
            expected: channels,
            got: c,
        }),
        _ => Err(TensorError::BadRank {
            op: "batch_norm",
            expected: 3,
            shape: shape.to_vec(),
        }),
    }
}

struct BatchNormRule<T> {
    inv_std: Vec<T>,
    mean: Vec<T>,
    train: bool,
}

impl<T: Scalar> BackwardRule<T> for BatchNormRule<T> {
    fn name(&self) -> &'static str {
        "batch_norm"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let x = ctx.input(0);
        let gamma = ctx.input(1).data();
        let channels = gamma.len();
        let (batch, len) = channel_dims(x.shape(), channels)?;
        let x = x.data();
        let count = T::lit((batch * len) as f64);
        let mut dx = vec![T::zero(); x.len()];
        let mut dgamma = vec![T::zero(); channels];
        let mut dbeta = vec![T::zero(); channels];
        for c in 0..channels {
            let (mu, is) = (self.mean[c], self.inv_std[c]);
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for b in 0..batch {
                let off = (b * channels + c) * len;
                for (&gv, &xv) in g[off..off + len].iter().zip(&x[off..off + len]) {
                    sum_g += gv;
                    sum_gx += gv * (xv - mu) * is;
                }
            }
            dgamma[c] = sum_gx;
            dbeta[c] = sum_g;
            let k = gamma[c] * is;
            for b in 0..batch {
                let off = (b * channels + c) * len;
                for i in off..off + len {
                    dx[i] = if self.train {
                        let xhat = (x[i] - mu) * is;
                        k * (g[i] - sum_g / count - xhat * sum_gx / count)
                    } else {
                        k * g[i]
                    };
                }
            }
        }
        Ok(vec![Some(dx), Some(dgamma), Some(dbeta)])
    }
}

fn batch_norm_apply<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    mean: Vec<T>,
    inv_std: Vec<T>,
    train: bool,
) -> Result<Var> {
    let xv = tape.value(x);
    let channels = mean.len();
    let (batch, len) = channel_dims(xv.shape(), channels)?;
    let gd = tape.value(gamma).data();
    let bd = tape.value(beta).data();
    let mut out = xv.data().to_vec();
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * len;
            for v in &mut out[off..off + len] {
                *v = gd[c] * (*v - mean[c]) * inv_std[c] + bd[c];
            }
        }
    }
    let value = Tensor::new(xv.shape().to_vec(), out)?;
    Ok(tape.push_op(
        value,
        vec![x, gamma, beta],
        Box::new(BatchNormRule {
            inv_std,
            mean,
            train,
        }),
    ))
}

/// Per-channel batch statistics over (batch, time): (mean, biased variance).
pub fn channel_moments<T: Scalar>(x: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
    let channels = *x.shape().get(1).unwrap_or(&0);
    let (batch, len) = channel_dims(x.shape(), channels)?;
    let data = x.data();
    let count = T::lit((batch * len) as f64);
    let mut mean = vec![T::zero(); channels];
    let mut var = vec![T::zero(); channels];
    for c in 0..channels {
        for b in 0..batch {
            for &v in &data[(b * channels + c) * len..][..len] {
                mean[c] += v;
            }
        }
        mean[c] /= count;
        for b in 0..batch {
            for &v in &data[(b * channels + c) * len..][..len] {
                let d = v - mean[c];
                var[c] += d * d;
            }
        }
        var[c] /= count;
    }
    Ok((mean, var))
}

/// Training-mode batch normalization; returns the output and the batch
/// (mean, biased variance).
pub fn batch_norm_train<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    eps: f64,
) -> Result<(Var, Vec<T>, Vec<T>)> {
    let (mean, var) = channel_moments(tape.value(x))?;
    let eps = T::lit(eps);
    let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let out = batch_norm_apply(tape, x, gamma, beta, mean.clone(), inv_std, true)?;
    Ok((out, mean, var))
}

/// Batch normalization with fixed statistics.
pub fn batch_norm_fixed<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    mean: &[T],
    var: &[T],
    eps: f64,
) -> Result<Var> {
    let eps = T::lit(eps);
    let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    batch_norm_apply(tape, x, gamma, beta, mean.to_vec(), inv_std, false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Number of training batches folded into the statistics.
    pub batches: u64,
}

/// Batch normalization layer: learned per-channel scale and shift plus
/// running statistics for evaluation.
#[derive(Debug)]
pub struct BatchNorm<T> {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
    running: Mutex<RunningStats<T>>,
}

impl<T: Scalar> BatchNorm<T> {
    pub const MOMENTUM: f64 = 0.1;
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{prefix}.gamma"), Tensor::ones([channels]), ParamGroup::Conv);
        let beta = store.add(format!("{prefix}.beta"), Tensor::zeros([channels]), ParamGroup::Conv);
        Self {
            gamma,
            beta,
            channels,
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
            running: Mutex::new(RunningStats {
                mean: vec![T::zero(); channels],
                var: vec![T::one(); channels],
                batches: 0,
            }),
        }
    }

    pub fn running(&self) -> RunningStats<T> {
        self.running.lock().expect("running stats lock").clone()
    }

    pub fn set_running(&self, stats: RunningStats<T>) {
        *self.running.lock().expect("running stats lock") = stats;
    }

    /// Train mode normalizes with batch statistics and folds them into the
    /// running estimates (unbiased variance); eval mode uses the running
    /// estimates.
    pub fn forward(&self, store: &ParamStore<T>, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let gamma = store.var(tape, self.gamma);
        let beta = store.var(tape, self.beta);
        match mode {
            Mode::Train => {
                let count = {
                    let s = tape.shape(x);
                    s.first().copied().unwrap_or(1) * s.get(2).copied().unwrap_or(1)
                };
                let (out, mean, var) = batch_norm_train(tape, x, gamma, beta, self.eps)?;
                let m = T::lit(self.momentum);
                let unbias = if count > 1 {
                    T::lit(count as f64 / (count - 1) as f64)
                } else {
                    T::one()
                };
                let mut running = self.running.lock().expect("running stats lock");
                for c in 0..self.channels {
                    running.mean[c] = (T::one() - m) * running.mean[c] + m * mean[c];
                    running.var[c] = (T::one() - m) * running.var[c] + m * var[c] * unbias;
                }
                running.batches += 1;
                Ok(out)
            }
            Mode::Eval => {
                let running = self.running();
                if running.batches == 0 {
                    return Err(TensorError::NoRunningStats);
                }
                batch_norm_fixed(tape, x, gamma, beta, &running.mean, &running.var, self.eps)
            }
        }
    }
}

//! Unidirectional gated recurrent unit over the time axis.
//!
//! Gate weights are stacked row-wise in the order update (z), reset (r),
//! candidate (h):
//!
//! ```text
//! z_t  = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
//! r_t  = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
//! h~_t = tanh(W_h x_t + U_h (r_t * h_{t-1}) + b_h)
//! h_t  = (1 - z_t) * h_{t-1} + z_t * h~_t
//! ```

use rand::Rng;

use crate::autodiff::{unary_apply, BackwardCtx, BackwardRule, Result, Tape, Tensor, TensorError, UnaryKind, Var};
use crate::nn::init::fan_in_uniform;
use crate::nn::param::{ParamGroup, ParamId, ParamStore};
use crate::scalar::{matmul, matmul_acc, Scalar};

/// Saved per-step activations, each `(steps, hidden, batch)`.
struct GruCache<T> {
    z: Vec<T>,
    r: Vec<T>,
    cand: Vec<T>,
    /// `steps + 1` hidden states, the first being h0 = 0.
    h: Vec<T>,
}

struct GruRule<T> {
    batch: usize,
    input: usize,
    hidden: usize,
    steps: usize,
    cache: GruCache<T>,
}

/// `(c, steps*batch)` with column `t*batch + b`.
fn time_major<T: Scalar>(x: &[T], batch: usize, c: usize, steps: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for ch in 0..c {
            for t in 0..steps {
                out[ch * steps * batch + t * batch + b] = x[(b * c + ch) * steps + t];
            }
        }
    }
    out
}

impl<T: Scalar> BackwardRule<T> for GruRule<T> {
    fn name(&self) -> &'static str {
        "gru"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let (batch, input, hidden, steps) = (self.batch, self.input, self.hidden, self.steps);
        let hb = hidden * batch;
        let cols = steps * batch;
        let w_ih = ctx.input(1).data();
        let w_hh = ctx.input(2).data();
        let u_h = &w_hh[2 * hidden * hidden..];
        let one = T::one();
        let GruCache { z, r, cand, h } = &self.cache;

        // d(pre-activation) for all gates, (3*hidden, steps*batch)
        let mut d_pre = vec![T::zero(); 3 * hidden * cols];
        let mut dw_hh = vec![T::zero(); 3 * hidden * hidden];
        let mut dh_next = vec![T::zero(); hb];
        let mut d_zr = vec![T::zero(); 2 * hb];
        let mut d_cand_pre = vec![T::zero(); hb];
        let mut rh = vec![T::zero(); hb];

        for t in (0..steps).rev() {
            let zt = &z[t * hb..][..hb];
            let rt = &r[t * hb..][..hb];
            let ct = &cand[t * hb..][..hb];
            let hprev = &h[t * hb..][..hb];
            let mut dh_prev = vec![T::zero(); hb];
            for i in 0..hidden {
                for b in 0..batch {
                    let k = i * batch + b;
                    let dh = g[(b * hidden + i) * steps + t] + dh_next[k];
                    let dc = dh * zt[k];
                    let dz = dh * (ct[k] - hprev[k]);
                    dh_prev[k] = dh * (one - zt[k]);
                    d_cand_pre[k] = dc * (one - ct[k] * ct[k]);
                    d_zr[k] = dz * zt[k] * (one - zt[k]);
                    rh[k] = rt[k] * hprev[k];
                }
            }
            // through U_h (r * h_prev)
            let d_rh = matmul(hidden, hidden, batch, u_h, true, &d_cand_pre, false);
            for k in 0..hb {
                let dr = d_rh[k] * hprev[k];
                dh_prev[k] += d_rh[k] * rt[k];
                d_zr[hb + k] = dr * rt[k] * (one - rt[k]);
            }
            // through U_z, U_r
            matmul_acc(hidden, 2 * hidden, batch, w_hh, true, &d_zr, false, &mut dh_prev, one);
            // weight gradients
            matmul_acc(2 * hidden, batch, hidden, &d_zr, false, hprev, true, &mut dw_hh[..2 * hidden * hidden], one);
            matmul_acc(hidden, batch, hidden, &d_cand_pre, false, &rh, true, &mut dw_hh[2 * hidden * hidden..], one);

            for gate in 0..3 {
                let src = if gate < 2 {
                    &d_zr[gate * hb..][..hb]
                } else {
                    &d_cand_pre[..]
                };
                for i in 0..hidden {
                    let dst = &mut d_pre[(gate * hidden + i) * cols + t * batch..][..batch];
                    dst.copy_from_slice(&src[i * batch..][..batch]);
                }
            }
            dh_next = dh_prev;
        }

        let x_mat = time_major(ctx.input(0).data(), batch, input, steps);
        let dw_ih = ctx
            .needs_grad(1)
            .then(|| matmul(3 * hidden, cols, input, &d_pre, false, &x_mat, true));
        let dbias = ctx.needs_grad(3).then(|| {
            d_pre
                .chunks(cols)
                .map(|row| row.iter().fold(T::zero(), |a, &v| a + v))
                .collect()
        });
        let dx = ctx.needs_grad(0).then(|| {
            let dx_mat = matmul(input, 3 * hidden, cols, w_ih, true, &d_pre, false);
            let mut dx = vec![T::zero(); batch * input * steps];
            for c in 0..input {
                for t in 0..steps {
                    for b in 0..batch {
                        dx[(b * input + c) * steps + t] = dx_mat[c * cols + t * batch + b];
                    }
                }
            }
            dx
        });
        Ok(vec![dx, dw_ih, ctx.needs_grad(2).then_some(dw_hh), dbias])
    }
}

/// Runs the recurrence over `x: (B, C, T)` from a zero initial state and
/// returns every hidden state as `(B, H, T)`.
///
/// `w_ih` is `(3H, C)`, `w_hh` is `(3H, H)`, `bias` is `(3H)`.
pub fn gru<T: Scalar>(tape: &mut Tape<T>, x: Var, w_ih: Var, w_hh: Var, bias: Var) -> Result<Var> {
    let (batch, input, steps) = match *tape.shape(x) {
        [b, c, t] => (b, c, t),
        _ => {
            return Err(TensorError::BadRank {
                op: "gru",
                expected: 3,
                shape: tape.shape(x).to_vec(),
            })
        }
    };
    let hidden = match *tape.shape(w_hh) {
        [rows, h] if rows == 3 * h => h,
        _ => {
            return Err(TensorError::Invalid(format!(
                "gru: recurrent weights must be (3H, H), got {:?}",
                tape.shape(w_hh)
            )))
        }
    };
    if tape.shape(w_ih) != [3 * hidden, input] {
        return Err(TensorError::ChannelMismatch {
            op: "gru",
            expected: tape.shape(w_ih).get(1).copied().unwrap_or(0),
            got: input,
        });
    }
    if tape.shape(bias) != [3 * hidden] {
        return Err(TensorError::ShapeMismatch {
            op: "gru bias",
            lhs: vec![3 * hidden],
            rhs: tape.shape(bias).to_vec(),
        });
    }

    let hb = hidden * batch;
    let cols = steps * batch;
    let x_mat = time_major(tape.value(x).data(), batch, input, steps);
    let mut pre = matmul(3 * hidden, input, cols, tape.value(w_ih).data(), false, &x_mat, false);
    for (row, &b) in pre.chunks_mut(cols).zip(tape.value(bias).data()) {
        row.iter_mut().for_each(|v| *v += b);
    }
    let w_hh_data = tape.value(w_hh).data();
    let u_h = &w_hh_data[2 * hidden * hidden..];

    let mut cache = GruCache {
        z: vec![T::zero(); steps * hb],
        r: vec![T::zero(); steps * hb],
        cand: vec![T::zero(); steps * hb],
        h: vec![T::zero(); (steps + 1) * hb],
    };
    let mut rh = vec![T::zero(); hb];
    for t in 0..steps {
        let (done, rest) = cache.h.split_at_mut((t + 1) * hb);
        let hprev = &done[t * hb..];
        let hnext = &mut rest[..hb];
        let u_zr = matmul(2 * hidden, hidden, batch, w_hh_data, false, hprev, false);
        for i in 0..hidden {
            for b in 0..batch {
                let k = i * batch + b;
                let col = t * batch + b;
                let zt = unary_apply(UnaryKind::Sigmoid, pre[i * cols + col] + u_zr[k]);
                let rt = unary_apply(UnaryKind::Sigmoid, pre[(hidden + i) * cols + col] + u_zr[hb + k]);
                cache.z[t * hb + k] = zt;
                cache.r[t * hb + k] = rt;
                rh[k] = rt * hprev[k];
            }
        }
        let u_c = matmul(hidden, hidden, batch, u_h, false, &rh, false);
        for i in 0..hidden {
            for b in 0..batch {
                let k = i * batch + b;
                let c = (pre[(2 * hidden + i) * cols + t * batch + b] + u_c[k]).tanh();
                let zt = cache.z[t * hb + k];
                cache.cand[t * hb + k] = c;
                hnext[k] = (T::one() - zt) * hprev[k] + zt * c;
            }
        }
    }

    let mut out = vec![T::zero(); batch * hidden * steps];
    for t in 0..steps {
        for i in 0..hidden {
            for b in 0..batch {
                out[(b * hidden + i) * steps + t] = cache.h[(t + 1) * hb + i * batch + b];
            }
        }
    }
    let value = Tensor::new([batch, hidden, steps], out)?;
    Ok(tape.push_op(
        value,
        vec![x, w_ih, w_hh, bias],
        Box::new(GruRule {
            batch,
            input,
            hidden,
            steps,
            cache,
        }),
    ))
}

/// A GRU layer's parameters inside a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct GruLayer {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

impl GruLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w_ih = store.add(
            format!("{prefix}.w_ih"),
            fan_in_uniform(&[3 * hidden_size, input_size], input_size, rng),
            ParamGroup::Gru,
        );
        let w_hh = store.add(
            format!("{prefix}.w_hh"),
            fan_in_uniform(&[3 * hidden_size, hidden_size], hidden_size, rng),
            ParamGroup::Gru,
        );
        let bias = store.add(format!("{prefix}.bias"), Tensor::zeros([3 * hidden_size]), ParamGroup::Gru);
        Self {
            input_size,
            hidden_size,
            w_ih,
            w_hh,
            bias,
        }
    }

    pub fn num_params(input_size: usize, hidden_size: usize) -> usize {
        3 * hidden_size * (input_size + hidden_size + 1)
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w_ih = store.var(tape, self.w_ih);
        let w_hh = store.var(tape, self.w_hh);
        let bias = store.var(tape, self.bias);
        gru(tape, x, w_ih, w_hh, bias)
    }
}

//! One-dimensional convolution along time and its transpose.
//!
//! Activations are laid out `(batch, channels, time)` and every kernel is
//! stored `(out_channels, in_channels, kernel)`, for both directions. With
//! that layout `conv_transpose1d(y, w')` is the adjoint of `conv1d(x, w)`
//! when `w'` is `w` with its first two axes swapped.

use crate::autodiff::{BackwardCtx, BackwardRule, Result, Tape, Tensor, TensorError, Var};
use crate::scalar::{matmul, Scalar};

/// Output length and (left, right) zero padding that make a strided
/// convolution produce `ceil(len / stride)` frames.
pub fn same_padding(len: usize, kernel: usize, stride: usize) -> (usize, usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(len);
    (out, total / 2, total - total / 2)
}

/// Left crop that maps a full transposed-convolution output back onto
/// `target` frames; the mirror image of [`same_padding`].
pub fn same_crop(in_len: usize, kernel: usize, stride: usize, target: usize) -> usize {
    ((in_len - 1) * stride + kernel).saturating_sub(target) / 2
}

fn dims3(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [b, c, t] => Ok((b, c, t)),
        _ => Err(TensorError::BadRank {
            op,
            expected: 3,
            shape: shape.to_vec(),
        }),
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    pad_left: usize,
    len_in: usize,
    len_out: usize,
}

impl ConvGeom {
    /// im2col: `(c_in*kernel, batch*len_out)`.
    fn columns<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let cols_n = self.batch * self.len_out;
        let mut cols = vec![T::zero(); self.c_in * self.kernel * cols_n];
        for c in 0..self.c_in {
            for k in 0..self.kernel {
                let row = &mut cols[(c * self.kernel + k) * cols_n..][..cols_n];
                for b in 0..self.batch {
                    let src = &x[(b * self.c_in + c) * self.len_in..][..self.len_in];
                    for t in 0..self.len_out {
                        let pos = (t * self.stride + k) as isize - self.pad_left as isize;
                        if pos >= 0 && (pos as usize) < self.len_in {
                            row[b * self.len_out + t] = src[pos as usize];
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`Self::columns`].
    fn scatter_columns<T: Scalar>(&self, cols: &[T]) -> Vec<T> {
        let cols_n = self.batch * self.len_out;
        let mut x = vec![T::zero(); self.batch * self.c_in * self.len_in];
        for c in 0..self.c_in {
            for k in 0..self.kernel {
                let row = &cols[(c * self.kernel + k) * cols_n..][..cols_n];
                for b in 0..self.batch {
                    let dst = &mut x[(b * self.c_in + c) * self.len_in..][..self.len_in];
                    for t in 0..self.len_out {
                        let pos = (t * self.stride + k) as isize - self.pad_left as isize;
                        if pos >= 0 && (pos as usize) < self.len_in {
                            dst[pos as usize] += row[b * self.len_out + t];
                        }
                    }
                }
            }
        }
        x
    }
}

/// `(c, batch*len)` matrix view of a `(batch, c, len)` tensor.
fn channels_major<T: Scalar>(x: &[T], batch: usize, c: usize, len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for ch in 0..c {
            let src = &x[(b * c + ch) * len..][..len];
            out[ch * batch * len + b * len..][..len].copy_from_slice(src);
        }
    }
    out
}

fn batch_major<T: Scalar>(x: &[T], batch: usize, c: usize, len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for ch in 0..c {
        for b in 0..batch {
            let src = &x[ch * batch * len + b * len..][..len];
            out[(b * c + ch) * len..][..len].copy_from_slice(src);
        }
    }
    out
}

fn bias_grad<T: Scalar>(g: &[T], batch: usize, c: usize, len: usize) -> Vec<T> {
    let mut db = vec![T::zero(); c];
    for b in 0..batch {
        for (ch, acc) in db.iter_mut().enumerate() {
            for &v in &g[(b * c + ch) * len..][..len] {
                *acc += v;
            }
        }
    }
    db
}

struct Conv1dRule {
    geom: ConvGeom,
    has_bias: bool,
}

impl<T: Scalar> BackwardRule<T> for Conv1dRule {
    fn name(&self) -> &'static str {
        "conv1d"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let geom = &self.geom;
        let x = ctx.input(0).data();
        let w = ctx.input(1).data();
        let rows = geom.c_in * geom.kernel;
        let n = geom.batch * geom.len_out;
        let g_mat = channels_major(g, geom.batch, geom.c_out, geom.len_out);

        let dw = ctx.needs_grad(1).then(|| {
            let cols = geom.columns(x);
            matmul(geom.c_out, n, rows, &g_mat, false, &cols, true)
        });
        let dx = ctx.needs_grad(0).then(|| {
            let dcols = matmul(rows, geom.c_out, n, w, true, &g_mat, false);
            geom.scatter_columns(&dcols)
        });
        let mut grads = vec![dx, dw];
        if self.has_bias {
            grads.push(
                ctx.needs_grad(2)
                    .then(|| bias_grad(g, geom.batch, geom.c_out, geom.len_out)),
            );
        }
        Ok(grads)
    }
}

/// Strided cross-correlation with explicit zero padding.
///
/// `x` is `(B, C_in, T)`, `w` is `(C_out, C_in, K)`, `bias` is `(C_out)`.
/// Output length is `floor((T + pad_l + pad_r - K) / stride) + 1`.
pub fn conv1d<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w: Var,
    bias: Option<Var>,
    stride: usize,
    padding: (usize, usize),
) -> Result<Var> {
    let (batch, c_in, len_in) = dims3("conv1d", tape.shape(x))?;
    let (c_out, w_in, kernel) = dims3("conv1d", tape.shape(w))?;
    if w_in != c_in {
        return Err(TensorError::ChannelMismatch {
            op: "conv1d",
            expected: w_in,
            got: c_in,
        });
    }
    if stride == 0 || kernel == 0 {
        return Err(TensorError::Invalid("conv1d: stride and kernel must be positive".into()));
    }
    let padded = len_in + padding.0 + padding.1;
    if padded < kernel {
        return Err(TensorError::TooShort {
            op: "conv1d",
            len: padded,
            kernel,
        });
    }
    if let Some(b) = bias {
        if tape.shape(b) != [c_out] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d bias",
                lhs: vec![c_out],
                rhs: tape.shape(b).to_vec(),
            });
        }
    }
    let geom = ConvGeom {
        batch,
        c_in,
        c_out,
        kernel,
        stride,
        pad_left: padding.0,
        len_in,
        len_out: (padded - kernel) / stride + 1,
    };
    let n = batch * geom.len_out;
    let cols = geom.columns(tape.value(x).data());
    let out_mat = matmul(c_out, c_in * kernel, n, tape.value(w).data(), false, &cols, false);
    let mut out = batch_major(&out_mat, batch, c_out, geom.len_out);
    if let Some(b) = bias {
        let bv = tape.value(b).data();
        for (row, &bias) in out.chunks_mut(geom.len_out).zip(bv.iter().cycle()) {
            row.iter_mut().for_each(|v| *v += bias);
        }
    }
    let value = Tensor::new([batch, c_out, geom.len_out], out)?;
    let mut inputs = vec![x, w];
    inputs.extend(bias);
    Ok(tape.push_op(
        value,
        inputs,
        Box::new(Conv1dRule {
            geom,
            has_bias: bias.is_some(),
        }),
    ))
}

#[derive(Debug, Clone, Copy)]
struct TconvGeom {
    batch: usize,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    len_in: usize,
    crop_left: usize,
    len_out: usize,
}

impl TconvGeom {
    fn full_len(&self) -> usize {
        (self.len_in - 1) * self.stride + self.kernel
    }
}

struct ConvTranspose1dRule {
    geom: TconvGeom,
    has_bias: bool,
}

impl<T: Scalar> BackwardRule<T> for ConvTranspose1dRule {
    fn name(&self) -> &'static str {
        "conv_transpose1d"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let geom = &self.geom;
        let x = ctx.input(0).data();
        let w = ctx.input(1).data();
        let (c_in, c_out, kernel) = (geom.c_in, geom.c_out, geom.kernel);
        let n = geom.batch * geom.len_in;
        let x_mat = channels_major(x, geom.batch, c_in, geom.len_in);
        let need_x = ctx.needs_grad(0);
        let need_w = ctx.needs_grad(1);

        let mut dx_mat = need_x.then(|| vec![T::zero(); c_in * n]);
        let mut dw = need_w.then(|| vec![T::zero(); c_out * c_in * kernel]);
        let mut g_k = vec![T::zero(); c_out * n];
        for k in 0..kernel {
            // g_k[o, b*len_in + t] = grad at full position t*stride + k
            for o in 0..c_out {
                for b in 0..geom.batch {
                    let src = &g[(b * c_out + o) * geom.len_out..][..geom.len_out];
                    let dst = &mut g_k[o * n + b * geom.len_in..][..geom.len_in];
                    for (t, d) in dst.iter_mut().enumerate() {
                        let pos = (t * geom.stride + k) as isize - geom.crop_left as isize;
                        *d = if pos >= 0 && (pos as usize) < geom.len_out {
                            src[pos as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
            let w_k = &w[k..];
            let strides = ((c_in * kernel) as isize, kernel as isize);
            if let Some(dx) = dx_mat.as_mut() {
                // dX += W_k^T g_k
                T::gemm(
                    c_in,
                    c_out,
                    n,
                    T::one(),
                    w_k,
                    (strides.1, strides.0),
                    &g_k,
                    (n as isize, 1),
                    T::one(),
                    dx,
                    (n as isize, 1),
                );
            }
            if let Some(dw) = dw.as_mut() {
                // dW_k = g_k X^T
                T::gemm(
                    c_out,
                    n,
                    c_in,
                    T::one(),
                    &g_k,
                    (n as isize, 1),
                    &x_mat,
                    (1, n as isize),
                    T::zero(),
                    &mut dw[k..],
                    strides,
                );
            }
        }
        let dx = dx_mat.map(|m| batch_major(&m, geom.batch, c_in, geom.len_in));
        let mut grads = vec![dx, dw];
        if self.has_bias {
            grads.push(
                ctx.needs_grad(2)
                    .then(|| bias_grad(g, geom.batch, c_out, geom.len_out)),
            );
        }
        Ok(grads)
    }
}

/// Transposed strided convolution (the gradient of [`conv1d`] w.r.t. its
/// input), with overlapping contributions summed.
///
/// `x` is `(B, C_in, T)`, `w` is `(C_out, C_in, K)`. The full output has
/// `(T - 1) * stride + K` frames; frames `crop_left .. crop_left + len_out`
/// are returned, zero-filled past the end. `len_out = None` keeps the
/// whole remainder.
pub fn conv_transpose1d<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w: Var,
    bias: Option<Var>,
    stride: usize,
    crop_left: usize,
    len_out: Option<usize>,
) -> Result<Var> {
    let (batch, c_in, len_in) = dims3("conv_transpose1d", tape.shape(x))?;
    let (c_out, w_in, kernel) = dims3("conv_transpose1d", tape.shape(w))?;
    if w_in != c_in {
        return Err(TensorError::ChannelMismatch {
            op: "conv_transpose1d",
            expected: w_in,
            got: c_in,
        });
    }
    if stride == 0 || kernel == 0 {
        return Err(TensorError::Invalid(
            "conv_transpose1d: stride and kernel must be positive".into(),
        ));
    }
    if let Some(b) = bias {
        if tape.shape(b) != [c_out] {
            return Err(TensorError::ShapeMismatch {
                op: "conv_transpose1d bias",
                lhs: vec![c_out],
                rhs: tape.shape(b).to_vec(),
            });
        }
    }
    let full = (len_in - 1) * stride + kernel;
    let len_out = len_out.unwrap_or(full.saturating_sub(crop_left));
    if len_out == 0 {
        return Err(TensorError::Invalid("conv_transpose1d: empty output".into()));
    }
    let geom = TconvGeom {
        batch,
        c_in,
        c_out,
        kernel,
        stride,
        len_in,
        crop_left,
        len_out,
    };
    debug_assert_eq!(geom.full_len(), full);

    let n = batch * len_in;
    let x_mat = channels_major(tape.value(x).data(), batch, c_in, len_in);
    let w_data = tape.value(w).data();
    let mut out = vec![T::zero(); batch * c_out * len_out];
    let mut cols = vec![T::zero(); c_out * n];
    for k in 0..kernel {
        T::gemm(
            c_out,
            c_in,
            n,
            T::one(),
            &w_data[k..],
            ((c_in * kernel) as isize, kernel as isize),
            &x_mat,
            (n as isize, 1),
            T::zero(),
            &mut cols,
            (n as isize, 1),
        );
        for o in 0..c_out {
            for b in 0..batch {
                let src = &cols[o * n + b * len_in..][..len_in];
                let dst = &mut out[(b * c_out + o) * len_out..][..len_out];
                for (t, &v) in src.iter().enumerate() {
                    let pos = (t * stride + k) as isize - crop_left as isize;
                    if pos >= 0 && (pos as usize) < len_out {
                        dst[pos as usize] += v;
                    }
                }
            }
        }
    }
    if let Some(b) = bias {
        let bv = tape.value(b).data();
        for (row, &bias) in out.chunks_mut(len_out).zip(bv.iter().cycle()) {
            row.iter_mut().for_each(|v| *v += bias);
        }
    }
    let value = Tensor::new([batch, c_out, len_out], out)?;
    let mut inputs = vec![x, w];
    inputs.extend(bias);
    Ok(tape.push_op(
        value,
        inputs,
        Box::new(ConvTranspose1dRule {
            geom,
            has_bias: bias.is_some(),
        }),
    ))
}

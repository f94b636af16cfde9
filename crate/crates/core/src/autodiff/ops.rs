//! Elementwise, matrix, reduction and shape operations on the tape.

use crate::autodiff::error::{Result, TensorError};
use crate::autodiff::tape::{BackwardCtx, BackwardRule, Tape, Var};
use crate::autodiff::tensor::{numel, Tensor};
use crate::scalar::{matmul, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryKind {
    Log1p,
    Expm1,
    Tanh,
    Sigmoid,
    LeakyRelu(f64),
    Square,
    /// Rounds to the nearest multiple of the step; the gradient passes
    /// straight through.
    Quantize(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

/// Leading-dimension broadcasting: the shorter shape must be a suffix of
/// the longer one. Returns the output shape.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if long[long.len() - short.len()..] == *short {
        Ok(long.to_vec())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        })
    }
}

/// Sums a gradient over repeated leading blocks down to `len` elements.
fn reduce_repeats<T: Scalar>(grad: &[T], len: usize) -> Vec<T> {
    if grad.len() == len {
        return grad.to_vec();
    }
    let mut out = vec![T::zero(); len];
    for chunk in grad.chunks(len) {
        out.iter_mut().zip(chunk).for_each(|(o, &g)| *o += g);
    }
    out
}

pub(crate) fn unary_apply<T: Scalar>(kind: UnaryKind, x: T) -> T {
    match kind {
        UnaryKind::Log1p => x.ln_1p(),
        UnaryKind::Expm1 => x.exp_m1(),
        UnaryKind::Tanh => x.tanh(),
        UnaryKind::Sigmoid => T::one() / (T::one() + (-x).exp()),
        UnaryKind::LeakyRelu(slope) => {
            if x >= T::zero() {
                x
            } else {
                x * T::lit(slope)
            }
        }
        UnaryKind::Square => x * x,
        UnaryKind::Quantize(step) => {
            let step = T::lit(step);
            (x / step).round() * step
        }
    }
}

struct BinaryRule {
    kind: BinaryKind,
}

impl<T: Scalar> BackwardRule<T> for BinaryRule {
    fn name(&self) -> &'static str {
        match self.kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        }
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let a = ctx.input(0).data();
        let b = ctx.input(1).data();
        let mut ga = None;
        let mut gb = None;
        match self.kind {
            BinaryKind::Add | BinaryKind::Sub => {
                if ctx.needs_grad(0) {
                    ga = Some(reduce_repeats(g, a.len()));
                }
                if ctx.needs_grad(1) {
                    let mut r = reduce_repeats(g, b.len());
                    if self.kind == BinaryKind::Sub {
                        r.iter_mut().for_each(|v| *v = -*v);
                    }
                    gb = Some(r);
                }
            }
            BinaryKind::Mul => {
                if ctx.needs_grad(0) {
                    let full: Vec<T> =
                        g.iter().enumerate().map(|(i, &gi)| gi * b[i % b.len()]).collect();
                    ga = Some(reduce_repeats(&full, a.len()));
                }
                if ctx.needs_grad(1) {
                    let full: Vec<T> =
                        g.iter().enumerate().map(|(i, &gi)| gi * a[i % a.len()]).collect();
                    gb = Some(reduce_repeats(&full, b.len()));
                }
            }
        }
        Ok(vec![ga, gb])
    }
}

struct UnaryRule {
    kind: UnaryKind,
}

impl<T: Scalar> BackwardRule<T> for UnaryRule {
    fn name(&self) -> &'static str {
        "unary"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let x = ctx.input(0).data();
        let y = ctx.output().data();
        let one = T::one();
        let grad: Vec<T> = match self.kind {
            UnaryKind::Log1p => g.iter().zip(x).map(|(&g, &x)| g / (one + x)).collect(),
            UnaryKind::Expm1 => g.iter().zip(y).map(|(&g, &y)| g * (y + one)).collect(),
            UnaryKind::Tanh => g.iter().zip(y).map(|(&g, &y)| g * (one - y * y)).collect(),
            UnaryKind::Sigmoid => g.iter().zip(y).map(|(&g, &y)| g * y * (one - y)).collect(),
            UnaryKind::LeakyRelu(slope) => {
                let slope = T::lit(slope);
                g.iter()
                    .zip(x)
                    .map(|(&g, &x)| if x >= T::zero() { g } else { g * slope })
                    .collect()
            }
            UnaryKind::Square => g.iter().zip(x).map(|(&g, &x)| g * (x + x)).collect(),
            UnaryKind::Quantize(_) => g.to_vec(),
        };
        Ok(vec![Some(grad)])
    }
}

struct ScaleRule<T> {
    factor: T,
}

impl<T: Scalar> BackwardRule<T> for ScaleRule<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, _ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        Ok(vec![Some(g.iter().map(|&v| v * self.factor).collect())])
    }
}

struct DivScalarRule<T> {
    divisor: T,
}

impl<T: Scalar> BackwardRule<T> for DivScalarRule<T> {
    fn name(&self) -> &'static str {
        "div_scalar"
    }

    fn backward(&self, _ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        Ok(vec![Some(g.iter().map(|&v| v / self.divisor).collect())])
    }
}

struct MatMulRule {
    m: usize,
    k: usize,
    n: usize,
}

impl<T: Scalar> BackwardRule<T> for MatMulRule {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let (m, k, n) = (self.m, self.k, self.n);
        let a = ctx.input(0).data();
        let b = ctx.input(1).data();
        // dA = dC * B^T, dB = A^T * dC
        let ga = ctx.needs_grad(0).then(|| matmul(m, n, k, g, false, b, true));
        let gb = ctx.needs_grad(1).then(|| matmul(k, m, n, a, true, g, false));
        Ok(vec![ga, gb])
    }
}

/// Maps every input element to its output position after dropping `axes`.
struct ReduceIndex {
    out_shape: Vec<usize>,
    map: Vec<usize>,
    count: usize,
}

fn reduce_index(op: &'static str, shape: &[usize], axes: &[usize]) -> Result<ReduceIndex> {
    let rank = shape.len();
    let mut reduced = vec![false; rank];
    for &axis in axes {
        if axis >= rank {
            return Err(TensorError::InvalidAxis { op, axis, rank });
        }
        reduced[axis] = true;
    }
    let out_shape: Vec<usize> = (0..rank).filter(|&d| !reduced[d]).map(|d| shape[d]).collect();
    let count = (0..rank).filter(|&d| reduced[d]).map(|d| shape[d]).product();

    // output stride for each input axis (0 for reduced axes)
    let mut out_strides = vec![0usize; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        if !reduced[d] {
            out_strides[d] = acc;
            acc *= shape[d];
        }
    }
    let total = numel(shape);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    for _ in 0..total {
        map.push(idx.iter().zip(&out_strides).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(ReduceIndex {
        out_shape,
        map,
        count,
    })
}

struct ReduceRule {
    map: Vec<usize>,
    scale: f64,
}

impl<T: Scalar> BackwardRule<T> for ReduceRule {
    fn name(&self) -> &'static str {
        "reduce"
    }

    fn backward(&self, _ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let scale = T::lit(self.scale);
        Ok(vec![Some(self.map.iter().map(|&o| g[o] * scale).collect())])
    }
}

struct ReshapeRule;

impl<T: Scalar> BackwardRule<T> for ReshapeRule {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, _ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        Ok(vec![Some(g.to_vec())])
    }
}

/// Splits a shape around `axis` into (outer, axis extent, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

struct ConcatRule {
    axis: usize,
}

impl<T: Scalar> BackwardRule<T> for ConcatRule {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let out_shape = ctx.output().shape();
        let (outer, total, inner) = split_axis(out_shape, self.axis);
        let mut grads = Vec::new();
        let mut offset = 0;
        let mut i = 0;
        loop {
            if offset >= total {
                break;
            }
            let extent = ctx.input(i).shape()[self.axis];
            if ctx.needs_grad(i) {
                let mut part = Vec::with_capacity(outer * extent * inner);
                for o in 0..outer {
                    let start = (o * total + offset) * inner;
                    part.extend_from_slice(&g[start..start + extent * inner]);
                }
                grads.push(Some(part));
            } else {
                grads.push(None);
            }
            offset += extent;
            i += 1;
        }
        Ok(grads)
    }
}

struct NarrowRule {
    axis: usize,
    start: usize,
}

impl<T: Scalar> BackwardRule<T> for NarrowRule {
    fn name(&self) -> &'static str {
        "narrow"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let in_shape = ctx.input(0).shape();
        let (outer, total, inner) = split_axis(in_shape, self.axis);
        let len = ctx.output().shape()[self.axis];
        let mut grad = vec![T::zero(); numel(in_shape)];
        for o in 0..outer {
            let dst = (o * total + self.start) * inner;
            let src = o * len * inner;
            grad[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
        }
        Ok(vec![Some(grad)])
    }
}

impl<T: Scalar> Tape<T> {
    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let op = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        };
        let (va, vb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(op, va.shape(), vb.shape())?;
        let (da, db) = (va.data(), vb.data());
        let n = numel(&shape);
        let data: Vec<T> = (0..n)
            .map(|i| {
                let (x, y) = (da[i % da.len()], db[i % db.len()]);
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                }
            })
            .collect();
        let value = Tensor::new(shape, data)?;
        Ok(self.push_op(value, vec![a, b], Box::new(BinaryRule { kind })))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn unary(&mut self, kind: UnaryKind, a: Var) -> Var {
        let value = self.value(a).map(|x| unary_apply(kind, x));
        self.push_op(value, vec![a], Box::new(UnaryRule { kind }))
    }

    pub fn log1p(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Log1p, a)
    }

    pub fn expm1(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Expm1, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, a)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(UnaryKind::LeakyRelu(slope), a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Square, a)
    }

    pub fn quantize(&mut self, a: Var, step: f64) -> Var {
        self.unary(UnaryKind::Quantize(step), a)
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.push_op(value, vec![a], Box::new(ScaleRule { factor }))
    }

    pub fn div_scalar(&mut self, a: Var, divisor: T) -> Var {
        let value = self.value(a).map(|x| x / divisor);
        self.push_op(value, vec![a], Box::new(DivScalarRule { divisor }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul(m, k, n, self.value(a).data(), false, self.value(b).data(), false);
        let value = Tensor::new([m, n], data)?;
        Ok(self.push_op(value, vec![a, b], Box::new(MatMulRule { m, k, n })))
    }

    pub fn reduce(&mut self, kind: ReduceKind, a: Var, axes: &[usize]) -> Result<Var> {
        let op = match kind {
            ReduceKind::Sum => "sum",
            ReduceKind::Mean => "mean",
        };
        let index = reduce_index(op, self.shape(a), axes)?;
        let src = self.value(a).data();
        let mut out = vec![T::zero(); numel(&index.out_shape)];
        for (&o, &v) in index.map.iter().zip(src) {
            out[o] += v;
        }
        let scale = match kind {
            ReduceKind::Sum => 1.0,
            ReduceKind::Mean => {
                let count = T::lit(index.count as f64);
                out.iter_mut().for_each(|v| *v /= count);
                1.0 / index.count as f64
            }
        };
        let value = Tensor::new(index.out_shape, out)?;
        Ok(self.push_op(
            value,
            vec![a],
            Box::new(ReduceRule {
                map: index.map,
                scale,
            }),
        ))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        self.reduce(ReduceKind::Sum, a, &axes).expect("all axes are valid")
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        self.reduce(ReduceKind::Mean, a, &axes).expect("all axes are valid")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).detached().reshape(shape.to_vec())?;
        Ok(self.push_op(value, vec![a], Box::new(ReshapeRule)))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| TensorError::Invalid("concat of nothing".into()))?)
            .to_vec();
        if axis >= first.len() {
            return Err(TensorError::InvalidAxis {
                op: "concat",
                axis,
                rank: first.len(),
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = split_axis(&out_shape, axis);
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let extent = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * extent..(o + 1) * extent]);
            }
        }
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push_op(value, parts.to_vec(), Box::new(ConcatRule { axis })))
    }

    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                op: "narrow",
                axis,
                rank: shape.len(),
            });
        }
        if start + len > shape[axis] || len == 0 {
            return Err(TensorError::Invalid(format!(
                "narrow: range {start}..{} outside axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, total, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * total + start) * inner;
            data.extend_from_slice(&src[s..s + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push_op(value, vec![a], Box::new(NarrowRule { axis, start })))
    }
}

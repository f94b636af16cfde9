use rand::Rng;

use crate::autodiff::{Result, Tape, Tensor, TensorError, Var};
use crate::nn::conv::{conv1d, conv_transpose1d, same_crop, same_padding};
use crate::nn::init::fan_in_uniform;
use crate::nn::norm::{weight_norm, BatchNorm};
use crate::nn::param::{ParamGroup, ParamId, ParamStore};
use crate::nn::{Mode, NormKind};
use crate::scalar::Scalar;

/// Convolution or transposed convolution with its normalization.
#[derive(Debug)]
pub struct ConvLayer<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub transposed: bool,
    pub norm: NormKind,
    /// Direction `v` under weight norm, the plain kernel otherwise.
    pub weight: ParamId,
    pub scale: Option<ParamId>,
    /// Absent under batch norm, whose shift takes its role.
    pub bias: Option<ParamId>,
    pub batch_norm: Option<BatchNorm<T>>,
}

impl<T: Scalar> ConvLayer<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        transposed: bool,
        norm: NormKind,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(kernel >= 1 && stride >= 1, "kernel and stride must be positive");
        let shape = [out_channels, in_channels, kernel];
        let init: Tensor<T> = fan_in_uniform(&shape, in_channels * kernel, rng);
        let (weight, scale) = if norm == NormKind::WeightNorm {
            let width = in_channels * kernel;
            let norms: Vec<T> = init
                .data()
                .chunks(width)
                .map(|row| row.iter().map(|&v| v * v).sum::<T>().sqrt())
                .collect();
            let v = store.add(format!("{prefix}.weight_v"), init, ParamGroup::Conv);
            let g = store.add(
                format!("{prefix}.weight_g"),
                Tensor::new([out_channels], norms).expect("one norm per row"),
                ParamGroup::Conv,
            );
            (v, Some(g))
        } else {
            (store.add(format!("{prefix}.weight"), init, ParamGroup::Conv), None)
        };
        let bias = (norm != NormKind::BatchNorm)
            .then(|| store.add(format!("{prefix}.bias"), Tensor::zeros([out_channels]), ParamGroup::Conv));
        let batch_norm =
            (norm == NormKind::BatchNorm).then(|| BatchNorm::new(store, &format!("{prefix}.bn"), out_channels));
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            transposed,
            norm,
            weight,
            scale,
            bias,
            batch_norm,
        }
    }

    pub fn num_params(in_channels: usize, out_channels: usize, kernel: usize, norm: NormKind) -> usize {
        let weights = out_channels * in_channels * kernel;
        match norm {
            NormKind::WeightNorm | NormKind::BatchNorm => weights + 2 * out_channels,
            NormKind::None => weights + out_channels,
        }
    }

    /// The kernel actually applied, after weight normalization.
    pub fn effective_weight(&self, store: &ParamStore<T>, tape: &mut Tape<T>) -> Result<Var> {
        let v = store.var(tape, self.weight);
        match self.scale {
            Some(g) => {
                let g = store.var(tape, g);
                weight_norm(tape, v, g)
            }
            None => Ok(v),
        }
    }

    /// Non-transposed layers pad to `ceil(T / stride)` output frames;
    /// transposed layers crop to `target_len` (default `T * stride`).
    pub fn forward(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        x: Var,
        mode: Mode,
        target_len: Option<usize>,
    ) -> Result<Var> {
        let len = *tape.shape(x).last().unwrap_or(&0);
        if len == 0 {
            return Err(TensorError::Invalid("convolution over an empty sequence".into()));
        }
        let w = self.effective_weight(store, tape)?;
        let b = self.bias.map(|b| store.var(tape, b));
        let y = if self.transposed {
            let target = target_len.unwrap_or(len * self.stride);
            let crop = same_crop(len, self.kernel, self.stride, target);
            conv_transpose1d(tape, x, w, b, self.stride, crop, Some(target))?
        } else {
            let (_, left, right) = same_padding(len, self.kernel, self.stride);
            conv1d(tape, x, w, b, self.stride, (left, right))?
        };
        match &self.batch_norm {
            Some(bn) => bn.forward(store, tape, y, mode),
            None => Ok(y),
        }
    }
}

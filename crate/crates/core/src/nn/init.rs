use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::autodiff::Tensor;
use crate::scalar::Scalar;

/// Independent N(0, std²) entries.
pub fn normal_tensor<T: Scalar>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let z: f64 = StandardNormal.sample(rng);
        T::lit(z * std)
    })
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) entries.
pub fn fan_in_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    Tensor::from_fn(shape.to_vec(), |_| T::lit(dist.sample(rng)))
}

use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Glorot/Xavier uniform draw for a `fan_in × fan_out` weight matrix.
pub fn xavier_uniform<S: Scalar, R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<S> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| S::lit(rng.random_range(-bound..bound)))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("positive fan sizes")
}

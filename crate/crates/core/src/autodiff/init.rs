use rand::Rng;

use super::{AutodiffError, Tensor};
use crate::scalar::Real;

/// Xavier/Glorot uniform initialisation: `U(-a, a)` with
/// `a = sqrt(6 / (fan_in + fan_out))`, i.e. variance `2 / (fan_in + fan_out)`.
///
/// Rank-1 shapes are biases and come back as zeros.
pub fn xavier_init<T: Real, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Tensor<T>, AutodiffError> {
    if shape.len() < 2 {
        return Tensor::zeros(shape);
    }
    let (fan_in, fan_out) = (shape[0], shape[1]);
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape, data)
}

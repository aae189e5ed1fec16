//! Weight initialization: fan-in-scaled uniform for conv and linear layers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::array::{Array, Scalar};

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) over the given shape.
pub fn fan_in_uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Array<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    uniform(rng, shape, -bound, bound)
}

pub fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Array<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.random_range(lo..hi)))
        .collect();
    Array::from_vec(shape, data)
}

use crate::error::{Error, Result};
use crate::rng::{rng_normal, RngStream};
use crate::tensor::Tensor;

/// Gaussian weights with mean 0 and std `sqrt(2 / fan_in)`.
pub fn he_init(shape: &[usize], fan_in: usize, stream: &mut RngStream) -> Result<Tensor> {
    if fan_in < 1 {
        return Err(Error::Range("fan_in must be at least 1".into()));
    }
    rng_normal(stream, shape, 0.0, (2.0 / fan_in as f64).sqrt())
}

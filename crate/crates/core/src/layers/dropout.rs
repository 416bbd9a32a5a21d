use super::{LayerCache, Mode};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Inverted dropout. Train mode zeroes each element with probability `rate`
/// and scales survivors by `1/(1-rate)`; eval mode is the identity.
pub fn dropout(
    x: &Tensor,
    rate: f64,
    mode: Mode,
    stream: Option<&mut RngStream>,
    cache: &mut LayerCache,
) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Range(format!("dropout rate must be in [0,1), got {rate}")));
    }
    cache.input_shape = x.shape().to_vec();
    cache.scale = 1.0 - rate;
    if mode == Mode::Eval {
        cache.mask = vec![true; x.len()];
        return Ok(x.clone());
    }
    let stream = stream.ok_or_else(|| Error::Parameter("train-mode dropout needs a random stream".into()))?;
    cache.mask = (0..x.len()).map(|_| stream.next_f64() >= rate).collect();
    let keep = 1.0 - rate;
    let data = x
        .data()
        .iter()
        .zip(&cache.mask)
        .map(|(&v, &on)| if on { v / keep } else { 0.0 })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

pub fn dropout_backward(grad_out: &Tensor, cache: &LayerCache) -> Result<Tensor> {
    if grad_out.shape() != cache.input_shape() || cache.mask.len() != grad_out.len() {
        return Err(Error::Shape(format!(
            "dropout grad_out {:?} does not match forward input {:?}",
            grad_out.shape(),
            cache.input_shape()
        )));
    }
    let keep = cache.scale;
    let data = grad_out
        .data()
        .iter()
        .zip(&cache.mask)
        .map(|(&g, &on)| if on { g / keep } else { 0.0 })
        .collect();
    Tensor::from_vec(grad_out.shape(), data)
}

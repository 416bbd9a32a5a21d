use super::LayerCache;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Elementwise `max(0, x)`.
pub fn relu(x: &Tensor, cache: &mut LayerCache) -> Tensor {
    cache.mask = x.data().iter().map(|&v| v > 0.0).collect();
    cache.input_shape = x.shape().to_vec();
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes gradient where the input was strictly positive. The kink at 0 gets 0.
pub fn relu_backward(grad_out: &Tensor, cache: &LayerCache) -> Result<Tensor> {
    if grad_out.shape() != cache.input_shape() {
        return Err(Error::Shape(format!(
            "relu grad_out {:?} does not match forward input {:?}",
            grad_out.shape(),
            cache.input_shape()
        )));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(&cache.mask)
        .map(|(&g, &on)| if on { g } else { 0.0 })
        .collect();
    Tensor::from_vec(grad_out.shape(), data)
}

/// Row-wise softmax over `[B, K]` logits with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let k = match *logits.shape() {
        [_, k] => k,
        _ => return Err(Error::Shape(format!("softmax expects [B,K], got {:?}", logits.shape()))),
    };
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    Ok(out)
}

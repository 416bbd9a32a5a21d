//! Forward and backward passes for every layer type the model builder emits.
//!
//! Activations are laid out `(batch, channels, height, width)`. Each forward
//! call records what its backward pass needs in a [`LayerCache`].

mod activation;
mod conv;
mod dense;
mod dropout;
mod init;
mod pool;

pub use activation::{relu, relu_backward, softmax};
pub use conv::{conv2d_backward, conv2d_forward, conv2d_reference, ConvParams, KERNEL_SIZE};
pub use dense::{dense_backward, dense_forward, DenseParams};
pub use dropout::{dropout, dropout_backward};
pub use init::he_init;
pub use pool::{maxpool_backward, maxpool_forward, POOL_SIZE};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Whether stochastic layers sample (training) or pass through (inference).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// State a layer keeps between its forward and backward pass.
#[derive(Clone, Debug, Default)]
pub struct LayerCache {
    pub(crate) input: Option<Tensor>,
    pub(crate) input_shape: Vec<usize>,
    pub(crate) argmax: Vec<usize>,
    pub(crate) mask: Vec<bool>,
    pub(crate) scale: f64,
}

impl LayerCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Shape of the forward input that filled this cache.
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }
}

pub(crate) fn expect_rank4(x: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(Error::Shape(format!("{what} expects (B,C,H,W), got {:?}", x.shape()))),
    }
}

/// `(B, C, H, W) -> (B, C*H*W)`, data order unchanged.
pub fn flatten(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = expect_rank4(x, "flatten")?;
    x.clone().reshape(&[b, c * h * w])
}

/// Inverse of [`flatten`] for a known `(C, H, W)`.
pub fn unflatten(x: &Tensor, chw: [usize; 3]) -> Result<Tensor> {
    let [c, h, w] = chw;
    match *x.shape() {
        [b, k] if k == c * h * w => x.clone().reshape(&[b, c, h, w]),
        _ => Err(Error::Shape(format!(
            "cannot unflatten {:?} into (_, {c}, {h}, {w})",
            x.shape()
        ))),
    }
}

#[cfg(test)]
pub(crate) mod gradcheck {
    use crate::rng::{rng_uniform, RngStream};
    use crate::tensor::Tensor;

    /// Norm-wise relative error `|a - n| / (|a| + |n|)`.
    pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
        let diff: f64 = analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        if na + nn < 1e-14 {
            diff
        } else {
            diff / (na + nn)
        }
    }

    /// Central differences of a scalar function with step `h`.
    pub fn numeric_grad(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
        let mut probe = x.clone();
        (0..x.len())
            .map(|i| {
                let orig = probe.data()[i];
                probe.data_mut()[i] = orig + h;
                let up = f(&probe);
                probe.data_mut()[i] = orig - h;
                let down = f(&probe);
                probe.data_mut()[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    pub fn random(shape: &[usize], seed: u64) -> Tensor {
        rng_uniform(&mut RngStream::new(seed, "gradcheck", 0), shape, -1.0, 1.0).unwrap()
    }

    pub fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }
}

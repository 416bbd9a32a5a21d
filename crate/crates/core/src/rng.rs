//! Seeded, platform-stable random streams.
//!
//! A stream is identified by `(master_seed, purpose_tag, counter)`. The triple is
//! hashed with SHA-256 into a ChaCha20 key, so two streams with the same identity
//! replay the same draws everywhere and distinct tags give unrelated sequences.
//! Work items (images, epochs, layers) get their own stream through
//! [`RngStream::derive`], which keeps results independent of processing order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    tag: String,
    counter: u64,
    rng: ChaCha20Rng,
}

fn stream_key(master_seed: u64, tag: &str, counter: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"scriptbmi.rng.v1");
    h.update(master_seed.to_le_bytes());
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    h.update(counter.to_le_bytes());
    h.finalize().into()
}

impl RngStream {
    pub fn new(master_seed: u64, tag: &str, counter: u64) -> Self {
        RngStream {
            master_seed,
            tag: tag.to_string(),
            counter,
            rng: ChaCha20Rng::from_seed(stream_key(master_seed, tag, counter)),
        }
    }

    /// Independent sub-stream `"<tag>:<counter>/<sub>"` at `index`, sharing the master seed.
    /// The parent's counter is part of the child's identity, so children of
    /// `(seed, tag, 0)` and `(seed, tag, 1)` never coincide.
    pub fn derive(&self, sub: &str, index: u64) -> RngStream {
        RngStream::new(self.master_seed, &format!("{}:{}/{}", self.tag, self.counter, sub), index)
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Number of 32-bit words consumed so far.
    pub fn position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform draw in `[lo, hi)`; `lo == hi` returns `lo`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if lo == hi {
            return lo;
        }
        let v = lo + (hi - lo) * self.next_f64();
        if v >= hi {
            hi.next_down()
        } else {
            v
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }
}

/// Tensor of i.i.d. uniform draws in `[lo, hi)`.
pub fn rng_uniform(stream: &mut RngStream, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor> {
    if !(lo < hi) {
        return Err(Error::Range(format!("uniform needs lo < hi, got [{lo}, {hi})")));
    }
    let mut t = Tensor::zeros(shape)?;
    for v in t.data_mut() {
        *v = stream.uniform(lo, hi);
    }
    Ok(t)
}

/// Tensor of i.i.d. Gaussian draws. `std == 0` yields the constant `mean`.
pub fn rng_normal(stream: &mut RngStream, shape: &[usize], mean: f64, std: f64) -> Result<Tensor> {
    if !(std >= 0.0) {
        return Err(Error::Range(format!("normal needs std >= 0, got {std}")));
    }
    let mut t = Tensor::zeros(shape)?;
    for v in t.data_mut() {
        *v = mean + std * stream.standard_normal();
    }
    Ok(t)
}

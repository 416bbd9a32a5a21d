//! Handwriting-based BMI-class estimation: tensors, CNN layers, training,
//! scan processing, augmentation, dataset handling and experiment runs.

// Parameter checks are written `!(x > 0.0)` so NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod imaging;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
mod par;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod weights;
pub mod workflow;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use tensor::Tensor;

//! Augmented-pattern classification.
//!
//! Small dense neural networks trained with on-line data deformation, and the
//! test-time decision rule that averages log-softmax outputs over many
//! randomly deformed copies of a test sample.
//!
//! Module map:
//! - [`nn`]: tensors, layers, networks with exact backpropagation, checkpoints
//! - [`optim`]: mini-batch SGD with momentum, per-epoch decay and L2
//! - [`augment`]: deterministic image deformation operators
//! - [`sampler`]: deformation PDFs and reproducible parameter sampling
//! - [`dataio`]: MNIST IDX and CIFAR-10 binary loaders
//! - [`trainer`]: on-line augmented training loop
//! - [`decision`]: APAC, softmax-sum and single-feedforward prediction

pub mod augment;
pub mod dataio;
pub mod decision;
mod error;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod sampler;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;

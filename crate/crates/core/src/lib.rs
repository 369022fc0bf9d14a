//! A small convolutional network engine for three-class chest X-ray triage:
//! tensors with reverse-mode differentiation, a configurable layer graph,
//! training, dataset handling and evaluation.
//!
//! Data parallelism over batch samples uses rayon when the `parallel`
//! feature is enabled (the default); without it everything runs on the
//! calling thread with identical results.

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod parallel;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{ModelGraph, LayerKind, LayerSpec};
pub use tensor::{Scalar, Tensor};

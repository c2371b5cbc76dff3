//! Core library for the cad detector: synthetic data generation, the
//! dual-path alignment/distillation model, training and evaluation harness,
//! and a discrete information-theory toolkit.

pub mod error;
pub mod graph;
pub mod infotheory;
pub mod params;
pub mod synthgen;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

//! Dense-array numerics with reverse-mode automatic differentiation.
//!
//! The crate provides exactly what the segmentation networks need: strided
//! convolutions and their transposes, batch normalization, the usual
//! activations, dropout, channel concatenation and a handful of reductions.
//! Graphs are generic over [`Real`] so the same network code runs in `f32`
//! for training and in `f64` for finite-difference checks.

pub mod check;
pub mod conv;
mod error;
pub mod graph;
mod real;
mod rng;
pub mod serialize;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{BatchNormMode, Conv2dOptions, Graph, RunningStats, Var};
pub use real::{DType, Real};
pub use rng::{splitmix64, Rng};
pub use serialize::{read_tensor, write_tensor};
pub use tensor::Tensor;

//! Binary neural network training with a cyclic backward-pass precision
//! schedule, plus an exact XNOR/popcount inference path.
//!
//! Forward passes binarize weights (after standardization) and activations
//! with the sign function. Backward passes use a straight-through estimator
//! whose activation surrogate is evaluated at a per-epoch precision that
//! sweeps cyclically between a minimum and maximum bit width.

pub mod bitkernel;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod quant;
pub mod rng;
pub mod schedule;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

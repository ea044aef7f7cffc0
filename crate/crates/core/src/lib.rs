//! Multiplant nonlinear system identification with block-structured
//! multikernel neural networks.
//!
//! Models are chains of memoryless tanh-MLP blocks ([`blocks::NlBlock`]) and
//! FIR blocks whose kernels may be specific to each plant of a dataset
//! ([`blocks::KernelMode::Multikernel`]). Everything runs in `f64` with
//! hand-written reverse-mode gradients checked against finite differences.

pub mod baselines;
pub mod blocks;
pub mod dft;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod plants;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{CTensor, Shape, Signal, Tensor4};

//! Forward-pass-only structured pruning for small decoder-only transformers.
//!
//! Attention heads and FFN intermediate dimensions are scored by evaluating
//! randomly masked sub-models, regressing module relevances from the
//! observed utilities, and greedily keeping the most relevant modules. The
//! crate is `no_std` and only needs `alloc`.

#![no_std]

extern crate alloc;

pub mod catalog;
pub mod engine;
mod error;
pub mod eval;
pub mod kernels;
pub mod priors;
pub mod pruner;
pub mod regression;
pub mod sampler;
pub mod tensor;

pub use error::{Error, Result};

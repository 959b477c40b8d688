//! File formats, benchmarking, reports and the command-line driver for
//! `bonsai-core`.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus_io;
mod error;
pub mod hooks;
pub mod mask_format;
pub mod report;

pub use error::{ForgeError, Result};

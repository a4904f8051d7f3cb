//! Core library for a small multimodal transformer that reasons in its own
//! hidden space: instead of emitting intermediate text, the model appends
//! continuous "thought" vectors to its input sequence and re-reads them on
//! the next pass. This crate carries the tensor type, the reverse-mode
//! autodiff tape, the model and its latent reasoning loop, synthetic
//! vision-question data, evaluation metrics, and the optimizer — all free of
//! I/O and usable without the standard library (allocation required).
//!
//! The companion CLI crate layers file formats, checkpointing and the
//! command-line harness on top.

#![no_std]
#![deny(unsafe_code)]

pub extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod mcout;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod schedule;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::{Scalar, Tensor};

//! Transformer forecaster for long-time dissipative two-level dynamics.
//!
//! The crate is `no_std` (with `alloc`) and carries every numerical piece of
//! the pipeline: a dense 64-bit matrix type with a define-by-run gradient
//! tape, the value-based sinusoidal time encoding, the two-layer encoder
//! forecaster, window slicing of ⟨σz(t)⟩ trajectories, a Lindblad surrogate
//! generator, Adam training and autoregressive rollout.
//!
//! File formats, threads and the command-line driver live in the `qdyn`
//! crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod embedding;
mod error;
pub mod gradcheck;
pub mod rollout;
pub mod surrogate;
pub mod tape;
pub mod tensor;
pub mod trainer;
pub mod transformer;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{ParamSet, Tensor};

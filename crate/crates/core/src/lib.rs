//! Compression and performance-modeling toolkit for sparse LSTM inference on
//! a PE-array accelerator.
//!
//! The pipeline stages map onto the modules below:
//!
//! * [`model`] — floating-point reference LSTM and the model container.
//! * [`compress`] — magnitude and load-balanced pruning masks.
//! * [`quantize`] — per-tensor fixed-point formats, activation lookup
//!   tables, and the bit-exact integer LSTM step.
//! * [`encode`] — relative-index compressed-sparse-column streams with
//!   per-PE row interleaving and zero padding.
//! * [`schedule`] — the per-timestep dataflow schedule and its validator.
//! * [`simulate`] — cycle-approximate timing of the PE channels, activation
//!   FIFOs and the weight-fetch lane.
//! * [`synth`] — seeded synthetic model generation for benchmarks.

pub mod compress;
pub mod container;
pub mod encode;
pub mod error;
pub mod matrix;
pub mod model;
pub mod quantize;
pub mod schedule;
pub mod simulate;
pub mod synth;

pub use error::{Error, Result};
pub use matrix::DenseMatrix;

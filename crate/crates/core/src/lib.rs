//! Allocation-only core of the ISAAQ textbook question answering pipeline.
//!
//! Everything here is pure computation over in-memory values: the dataset
//! model, background retrieval, a small transformer encoder with a reverse-mode
//! tape, bottom-up/top-down diagram attention, the three question-type
//! solvers, the calibrated ensemble, and the training loop. File formats and
//! the command line live in the `isaaq` crate.

#![no_std]

extern crate alloc;

pub mod attention;
pub mod autodiff;
pub mod corpus;
pub mod encoder;
pub mod ensemble;
pub mod eval;
mod error;
pub mod params;
pub mod retrieval;
pub mod sequence;
pub mod solvers;
pub mod tensor;
pub mod tokenizer;
pub mod toy;
pub mod train;
pub mod vision;

pub use error::{Error, Result};

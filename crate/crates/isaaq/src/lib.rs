//! Filesystem side of the ISAAQ pipeline: the dataset layout, caches,
//! weight files, configs and the `isaaq` command line.

pub mod cache;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod convert;
pub mod dataset;
mod error;
pub mod features;
pub mod heatmap;
pub mod pipeline;
pub mod weights;

pub use error::{Error, ErrorReport, Result};

//! Progressive multi-scale light field networks.
//!
//! A single MLP maps an encoded ray to RGBA; nested neuron subsets of every
//! layer encode the light field at successively finer, box-filtered scales.
//! This crate holds the network, its trainer, the adaptive renderer, the
//! chunked streaming format and the evaluation metrics.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod linalg;
pub mod metrics;
pub mod pronet;
pub mod renderer;
pub mod streamfmt;
pub mod train;

pub use error::{Error, FormatError, Result};
pub use pronet::{ArchSpec, LodIndex, ProgressiveMlp};

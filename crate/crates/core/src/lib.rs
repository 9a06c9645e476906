//! Generative modeling of HD lane maps as two-level hierarchical spatial graphs.
//!
//! The crate covers the whole pipeline: synthetic city corpora, preprocessing into
//! hierarchical graphs, the autoregressive generator and its two baselines, and the
//! fidelity / diversity / latency metrics used to compare them.

mod error;
pub mod map;
pub mod preprocess;
pub mod synth;
pub mod dataset;
pub mod nn;
pub mod train;
pub mod hdmapgen;
pub mod baselines;
pub mod metrics;
pub mod render;
pub mod generator;

pub use error::{Error, Result};

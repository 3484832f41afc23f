//! Self-supervised detection of manipulated audio-visual sequences.
//!
//! The pipeline ingests per-frame audio-visual synchronization affinities,
//! derives feature sequences from them (delay distributions, discrete delays,
//! PCA-projected activations, concatenations, quantized grids), fits an
//! autoregressive Transformer decoder to sequences from real videos only, and
//! flags test sequences the model assigns a high negative log-likelihood.

pub mod error;
pub mod features;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod scoring;
pub mod synth;
pub mod training;

pub use error::{Error, Result};

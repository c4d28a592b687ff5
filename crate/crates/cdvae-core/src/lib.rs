//! Cross-domain variational autoencoder (CDVAE) toolkit for non-parallel
//! spectral voice conversion.
//!
//! The crate covers the full frame-level pipeline:
//!
//! - [`nn`]: dense-matrix kernels, a reverse-mode tape, a seeded Gaussian
//!   sampler, and the ADAM optimizer. Everything is `f64` and deterministic.
//! - [`features`]: spectral-envelope normalization, mel-warped cepstral
//!   analysis/synthesis, log-F0 statistics and conversion, mel-cepstral
//!   distortion, the global-variance post-filter, and Gaussian smoothing.
//! - [`model`]: the two-encoder/two-decoder CDVAE with learned speaker codes,
//!   its four loss terms, and the single-domain VAE baseline.
//! - [`train`]: mini-batch training, checkpointing, speaker statistics, and
//!   objective evaluation (mean MCD tables).
//! - [`convert`]: the four conversion paths plus F0/AP/energy handling and
//!   post-processing.
//! - [`io`] / [`synth`]: binary feature/checkpoint formats, corpus manifests,
//!   and a deterministic synthetic-corpus generator.
//!
//! Waveform analysis/synthesis is out of scope: the toolkit consumes and
//! produces frame-level vocoder features (any tool that writes the feature
//! file format can feed real speech parameters in).

// `!(x > 0.0)` rejects NaN along with non-positive values; the suggested
// rewrite `x <= 0.0` would let NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod convert;
pub mod corpus;
pub mod error;
pub mod features;
pub mod io;
pub mod model;
pub mod nn;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

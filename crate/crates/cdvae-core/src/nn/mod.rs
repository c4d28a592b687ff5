//! Dense numerical kernel: matrices, a reverse-mode tape, layer primitives,
//! a counter-based Gaussian sampler, and the ADAM optimizer.
//!
//! All values are `f64`. Forward operations are pure; training mutation
//! (`adam_step`) is single-writer.

pub mod kernels;
pub mod matrix;
pub mod params;
pub mod rng;
pub mod tape;

pub use kernels::{dense_forward, layer_norm, lrelu};
pub use matrix::Matrix;
pub use params::{adam_step, AdamHyper, GradStore, ParamId, ParamStore};
pub use rng::Rng;
pub use tape::{NodeId, Tape};

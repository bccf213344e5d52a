//! Sparse steerable convolutions.
//!
//! SE(3)-equivariant feature learning on sparse voxel grids: rotation
//! steerable kernels synthesized from spherical-harmonic bases, executed
//! with rule-book sparse convolution, plus equivariant normalization and
//! gated activation layers with hand-written reverse-mode gradients, and a
//! toy two-stage pose estimator with feature-space steering refinement.

pub mod conv;
pub mod diagnostics;
pub mod error;
pub mod kernel;
pub mod layers;
pub mod pipeline;
pub mod repr;
pub mod steering;
pub mod tensor;

pub use error::{Error, Result};

//! Desk-scale toolkit for extreme-aspect-ratio panorama synthesis.
//!
//! The pipeline treats a huge canvas as a sequence of overlapping windows
//! visited along a planned scan trajectory. Each stage is its own module:
//!
//! - [`trajectory`]: anchor planning (linear and snake scans), window
//!   intervals, coverage accounting, and block partitioning.
//! - [`rope`]: scanning rotary embeddings, trajectory-aware 3D rotary
//!   phases plus the attention kernel that consumes them.
//! - [`flow`]: conditional flow-matching training and Euler sampling for a
//!   small vector-field network built on the scanning attention layer.
//! - [`fusion`]: median-consensus frame selection and ramp-weighted
//!   accumulation of tiles onto a global canvas under bounded memory.
//! - [`metrics`]: patch partitioning, Gram-matrix style loss, and global
//!   structural diversity with pluggable feature back-ends.
//! - [`io`]: the binary tensor/feature/pairwise containers and 8-bit
//!   image export shared by every stage.
//!
//! All floating-point kernels are generic over [`Scalar`] (`f32` or `f64`);
//! concrete aliases for the common widths live at the crate root.

// the kernels index several arrays at matched positions per iteration
#![allow(clippy::needless_range_loop)]

pub mod flow;
pub mod fusion;
pub mod geom;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod rope;
pub mod scalar;
pub mod tensor;
pub mod trajectory;

pub use geom::{Extent, GridCoord};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Single-precision tensor, the width used by the on-disk formats.
pub type Tensor32 = Tensor<f32>;
/// Double-precision tensor, the width used by gradient checks.
pub type Tensor64 = Tensor<f64>;

pub type PanoramaCanvas32 = fusion::PanoramaCanvas<f32>;
pub type PanoramaCanvas64 = fusion::PanoramaCanvas<f64>;

pub type VectorFieldNet32 = flow::VectorFieldNet<f32>;
pub type VectorFieldNet64 = flow::VectorFieldNet<f64>;

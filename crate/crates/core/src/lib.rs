//! Anchored, Procrustes-aligned low-rank tensor primitives.
//!
//! The crate provides dense tensor kernels, Tucker decomposition (HOSVD /
//! HOOI), orthogonal Procrustes alignment against medoid anchors, the
//! matrix and tensor Grassmannian primitive encoders, error metrics, a
//! minimal DDPM/DDIM diffusion engine, and deterministic data generators.

// Guards written as `!(x > 0.0)` also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anchor;
pub mod archive;
pub mod datagen;
pub mod diffusion;
pub mod dtz;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod par;
pub mod primitives;
pub mod procrustes;
pub mod rng;
pub mod tensor;
pub mod tucker;

pub use error::{GatsError, Result};
pub use linalg::{StiefelMatrix, SvdResult};
pub use par::Execution;
pub use rng::GatsRng;
pub use tensor::{DenseMatrix, DenseTensor};

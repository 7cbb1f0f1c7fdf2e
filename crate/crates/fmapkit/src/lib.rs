//! Spectral non-rigid shape correspondence at desk scale.
//!
//! The pipeline, end to end:
//!
//! 1. [`mesh`] loads and normalizes triangle meshes, grid-subsamples point
//!    clouds into a [`mesh::SamplingHierarchy`] and answers radius queries.
//! 2. [`spectral`] assembles the cotangent Laplace-Beltrami operator, computes
//!    a truncated eigenbasis and classical descriptor fields (HKS/WKS).
//! 3. [`features`] learns point-cloud convolution descriptors (a reduced
//!    kernel-point network) applied in a Siamese fashion to both shapes.
//! 4. [`fmap`] solves for a functional map from spectral descriptor
//!    coefficients with a differentiable, Laplacian-regularized row solver,
//!    and scores maps against ground truth with a spectral loss.
//! 5. [`convert`] recovers dense point maps from functional maps and refines
//!    them (ICP in the spectral domain, ZoomOut basis upsampling).
//! 6. [`eval`] measures correspondence quality with area-normalized geodesic
//!    errors and accuracy curves.
//!
//! Conventions used throughout (stated once, relied on everywhere):
//!
//! - A pair is (source `M`, target `N`). The functional map `C` is
//!   `k_N x k_M` and acts on source spectral coefficients: `C * A ~ B`.
//! - Point maps go the other way: `T: N -> M`, one source vertex per target
//!   vertex.
//! - Spectral math is `f64`; eigenbases are mass-orthonormal.

pub mod convert;
pub mod eval;
pub mod features;
pub mod fmap;
pub mod mesh;
pub mod sparse;
pub mod spectral;
pub mod synth;

mod error;

pub use error::{Error, Result};

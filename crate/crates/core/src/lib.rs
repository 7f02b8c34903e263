//! Differentiable plane-intersection Gaussian splatting for reconstructing
//! volumes from posed 2D slices.
//!
//! A scene is a [`GaussianCloud`] of anisotropic 3D Gaussians whose
//! precision matrices are parametrized by a lower-triangular factor. A slice
//! is rendered by lifting each pixel onto the probe plane (`z = 0` in the
//! probe frame) and evaluating every nearby Gaussian there, blended with a
//! uniform background component.

// `!(x > 0.0)` deliberately rejects NaN; index loops are clearer for 3×3 algebra.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod error;
pub mod gradients;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod pose;
pub mod rasterizer;
pub mod real;
pub mod trainer;

pub use data::{SliceDataset, SliceImage, Split, Volume};
pub use error::{Error, Result};
pub use gradients::{backward, grad_check, GradCheckReport, ParamGradients};
pub use model::{GaussianCloud, ProbeFrameGaussian, TriangularPrecision};
pub use pose::ProbePose;
pub use rasterizer::{rasterize, render_slice, ExecMode, RenderBuffers, SliceSpec};
pub use real::Real;

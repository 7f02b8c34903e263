//! Volumes, synthetic phantoms, slice sampling and slice datasets.

mod dataset;
mod phantom;
mod sampling;
mod volume;

use serde::{Deserialize, Serialize};

use crate::pose::ProbePose;

pub use dataset::{
    load_dataset, make_axial_stack, make_random_sweep, save_dataset, split_dataset, SliceDataset,
    Split,
};
pub use phantom::{blobs_cloud, blobs_volume, histogram_modes, make_phantom, PhantomKind, DEFAULT_BLOBS};
pub use sampling::{sample_slice, trilinear};
pub use volume::{load_volume, save_volume, volume_paths, Volume, VolumeHeader};

/// A scalar image in `[0, 1]` together with the probe pose it was taken at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceImage {
    pub width: usize,
    pub height: usize,
    /// mm per pixel.
    pub spacing: f64,
    pub pose: ProbePose,
    /// Row-major, `height × width`.
    pub pixels: Vec<f32>,
}

impl SliceImage {
    pub fn constant(width: usize, height: usize, spacing: f64, pose: ProbePose, value: f32) -> Self {
        Self {
            width,
            height,
            spacing,
            pose,
            pixels: vec![value; width * height],
        }
    }

    pub fn spec(&self) -> crate::rasterizer::SliceSpec {
        crate::rasterizer::SliceSpec {
            width: self.width,
            height: self.height,
            spacing: self.spacing,
            pose: self.pose,
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.pixels[v * self.width + u]
    }
}

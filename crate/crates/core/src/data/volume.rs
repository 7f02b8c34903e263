use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vec3;

pub const VOLUME_FORMAT: &str = "slicesplat-volume";
pub const VOLUME_VERSION: u32 = 1;

/// A `depth × height × width` scalar grid with isotropic spacing, centred
/// on the world origin. Voxel `(k, j, i)` sits at world
/// `((i − (W−1)/2)·s, (j − (H−1)/2)·s, (k − (D−1)/2)·s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    /// `[depth, height, width]`
    pub dims: [usize; 3],
    /// Isotropic voxel size in mm.
    pub spacing: f64,
    /// Row-major `(k, j, i)`.
    pub voxels: Vec<f32>,
}

/// JSON sidecar describing the raw payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub format: String,
    pub version: u32,
    /// `[depth, height, width]`
    pub dims: [usize; 3],
    pub spacing: f64,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: f64, voxels: Vec<f32>) -> Result<Self> {
        let v = Self {
            dims,
            spacing,
            voxels,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn filled(dims: [usize; 3], spacing: f64, value: f32) -> Result<Self> {
        Self::new(dims, spacing, vec![value; dims.iter().product()])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0) || !self.spacing.is_finite() {
            return Err(Error::invalid(format!("spacing must be > 0, got {}", self.spacing)));
        }
        if self.dims.contains(&0) {
            return Err(Error::invalid(format!("volume dims must be ≥ 1, got {:?}", self.dims)));
        }
        let expected: usize = self.dims.iter().product();
        if self.voxels.len() != expected {
            return Err(Error::DimensionMismatch {
                expected: format!("{expected} voxels"),
                actual: format!("{} voxels", self.voxels.len()),
            });
        }
        if let Some(bad) = self.voxels.iter().position(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!(
                "voxel {bad} = {} outside [0, 1]",
                self.voxels[bad]
            )));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.dims[0]
    }

    pub fn height(&self) -> usize {
        self.dims[1]
    }

    pub fn width(&self) -> usize {
        self.dims[2]
    }

    #[inline]
    pub fn at(&self, k: usize, j: usize, i: usize) -> f32 {
        self.voxels[(k * self.dims[1] + j) * self.dims[2] + i]
    }

    /// World position (mm) of a voxel centre.
    pub fn voxel_center(&self, k: usize, j: usize, i: usize) -> Vec3<f64> {
        let c = |idx: usize, n: usize| (idx as f64 - (n as f64 - 1.0) / 2.0) * self.spacing;
        [c(i, self.dims[2]), c(j, self.dims[1]), c(k, self.dims[0])]
    }

    /// Physical extent along world `(x, y, z)` in mm.
    pub fn extent_mm(&self) -> Vec3<f64> {
        [
            self.dims[2] as f64 * self.spacing,
            self.dims[1] as f64 * self.spacing,
            self.dims[0] as f64 * self.spacing,
        ]
    }

    /// `(min, max)` world corners, `±extent/2`.
    pub fn world_bounds(&self) -> (Vec3<f64>, Vec3<f64>) {
        let e = self.extent_mm();
        (e.map(|v| -v / 2.0), e.map(|v| v / 2.0))
    }

    /// World z of axial voxel plane `k`.
    pub fn plane_z(&self, k: usize) -> f64 {
        self.voxel_center(k, 0, 0)[2]
    }

    pub fn header(&self) -> VolumeHeader {
        VolumeHeader {
            format: VOLUME_FORMAT.to_string(),
            version: VOLUME_VERSION,
            dims: self.dims,
            spacing: self.spacing,
        }
    }
}

/// `(raw, json)` paths for a base path; a trailing `.raw` or `.json` is
/// stripped first.
pub fn volume_paths(base: &Path) -> (PathBuf, PathBuf) {
    let stem = match base.extension().and_then(|e| e.to_str()) {
        Some("raw") | Some("json") => base.with_extension(""),
        _ => base.to_path_buf(),
    };
    let name = stem.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    (
        stem.with_file_name(format!("{name}.raw")),
        stem.with_file_name(format!("{name}.json")),
    )
}

pub fn save_volume(volume: &Volume, base: &Path) -> Result<()> {
    volume.validate()?;
    let (raw, json) = volume_paths(base);
    let mut bytes = Vec::with_capacity(volume.voxels.len() * 4);
    for v in &volume.voxels {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&raw, bytes)?;
    fs::write(&json, serde_json::to_string_pretty(&volume.header())?)?;
    Ok(())
}

pub fn load_volume(base: &Path) -> Result<Volume> {
    let (raw, json) = volume_paths(base);
    let header: VolumeHeader = serde_json::from_slice(&fs::read(&json)?)
        .map_err(|e| Error::format(&json, format!("bad header: {e}")))?;
    if header.format != VOLUME_FORMAT {
        return Err(Error::format(
            &json,
            format!("bad magic {:?}, expected {VOLUME_FORMAT:?}", header.format),
        ));
    }
    if header.version != VOLUME_VERSION {
        return Err(Error::format(&json, format!("unsupported version {}", header.version)));
    }
    let bytes = fs::read(&raw)?;
    let expected = header.dims.iter().product::<usize>() * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            &raw,
            format!("size mismatch: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let voxels: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(bad) = voxels.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(&raw, format!("non-finite voxel at index {bad}")));
    }
    Volume::new(header.dims, header.spacing, voxels).map_err(|e| Error::format(&raw, e.to_string()))
}

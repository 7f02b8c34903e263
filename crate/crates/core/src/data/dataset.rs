use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sampling::sample_slice;
use super::volume::Volume;
use super::SliceImage;
use crate::error::{Error, Result};
use crate::pose::ProbePose;
use crate::rasterizer::SliceSpec;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceDataset {
    pub slices: Vec<SliceImage>,
    /// Parallel to `slices`.
    pub splits: Vec<Split>,
}

impl SliceDataset {
    /// All slices labelled as training data.
    pub fn new(slices: Vec<SliceImage>) -> Self {
        let splits = vec![Split::Train; slices.len()];
        Self { slices, splits }
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn with_split(&self, split: Split) -> impl Iterator<Item = &SliceImage> {
        self.slices
            .iter()
            .zip(&self.splits)
            .filter(move |(_, s)| **s == split)
            .map(|(img, _)| img)
    }

    pub fn train(&self) -> Vec<SliceImage> {
        self.with_split(Split::Train).cloned().collect()
    }

    pub fn test(&self) -> Vec<SliceImage> {
        self.with_split(Split::Test).cloned().collect()
    }
}

/// Voxel plane used for slice `k` of an `n`-slice stack through `depth` planes.
pub(crate) fn stack_plane(k: usize, n: usize, depth: usize) -> usize {
    ((2 * k + 1) * depth / (2 * n)).min(depth - 1)
}

/// `n` axial slices at voxel-aligned heights spread evenly through the
/// volume, each tilted by independent `U(−perturb, +perturb)` degree
/// rotations about the probe's in-plane x and y axes.
pub fn make_axial_stack(volume: &Volume, n: usize, perturb_deg: f64, seed: u64) -> Result<SliceDataset> {
    if n == 0 {
        return Err(Error::invalid("stack needs at least one slice"));
    }
    if !(perturb_deg >= 0.0) {
        return Err(Error::invalid(format!("perturbation must be ≥ 0, got {perturb_deg}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slices = (0..n)
        .map(|k| {
            let z = volume.plane_z(stack_plane(k, n, volume.depth()));
            let (rx, ry) = if perturb_deg > 0.0 {
                (
                    rng.random_range(-perturb_deg..=perturb_deg),
                    rng.random_range(-perturb_deg..=perturb_deg),
                )
            } else {
                (0.0, 0.0)
            };
            let pose = ProbePose::from_euler_zyx_deg(rx, ry, 0.0, [0.0, 0.0, z]);
            let spec = SliceSpec::new(volume.width(), volume.height(), volume.spacing, pose)?;
            Ok(sample_slice(volume, &spec))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SliceDataset::new(slices))
}

/// A freehand-style sweep: `n` frames advancing along the axial direction
/// through the central 80% of the volume, with random tilts of up to
/// `max_tilt_deg`, free in-plane rotation and small lateral drift.
pub fn make_random_sweep(volume: &Volume, n: usize, max_tilt_deg: f64, seed: u64) -> Result<SliceDataset> {
    if n == 0 {
        return Err(Error::invalid("sweep needs at least one slice"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ext = volume.extent_mm();
    let z_half = 0.4 * ext[2];
    let slices = (0..n)
        .map(|k| {
            let t = if n == 1 { 0.5 } else { k as f64 / (n - 1) as f64 };
            let z = -z_half + 2.0 * z_half * t;
            let drift = [0.05 * ext[0], 0.05 * ext[1]];
            let pose = ProbePose::from_euler_zyx_deg(
                rng.random_range(-max_tilt_deg..=max_tilt_deg),
                rng.random_range(-max_tilt_deg..=max_tilt_deg),
                rng.random_range(-180.0..180.0),
                [
                    rng.random_range(-drift[0]..=drift[0]),
                    rng.random_range(-drift[1]..=drift[1]),
                    z,
                ],
            );
            let spec = SliceSpec::new(volume.width(), volume.height(), volume.spacing, pose)?;
            Ok(sample_slice(volume, &spec))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SliceDataset::new(slices))
}

/// Random train/test partition; the test count is `⌊n·(1 − train_fraction)⌋`.
pub fn split_dataset(dataset: &SliceDataset, train_fraction: f64, seed: u64) -> Result<SliceDataset> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 slices to split, got {n}")));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    // the epsilon absorbs representation error, e.g. 100·(1 − 0.8) = 19.999…
    let n_test = ((n as f64) * (1.0 - train_fraction) + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = vec![Split::Train; n];
    for &i in &order[..n_test] {
        splits[i] = Split::Test;
    }
    Ok(SliceDataset {
        slices: dataset.slices.clone(),
        splits,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    slices: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    pose: ProbePose,
    spacing: f64,
    /// `[height, width]`
    dims: [usize; 2],
    split: Split,
}

/// Writes `slice_%04d.raw` (float32 LE) files plus `manifest.json`.
pub fn save_dataset(dataset: &SliceDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(dataset.len());
    for (i, (img, split)) in dataset.slices.iter().zip(&dataset.splits).enumerate() {
        let file = format!("slice_{i:04}.raw");
        let bytes: Vec<u8> = img.pixels.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(&file), bytes)?;
        entries.push(ManifestEntry {
            file,
            pose: img.pose,
            spacing: img.spacing,
            dims: [img.height, img.width],
            split: *split,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        slices: entries,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<SliceDataset> {
    let path = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_slice(&fs::read(&path)?)
        .map_err(|e| Error::format(&path, e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::format(&path, format!("unsupported version {}", manifest.version)));
    }
    let mut slices = Vec::with_capacity(manifest.slices.len());
    let mut splits = Vec::with_capacity(manifest.slices.len());
    for e in manifest.slices {
        let file = dir.join(&e.file);
        let bytes = fs::read(&file)?;
        let expected = e.dims[0] * e.dims[1] * 4;
        if bytes.len() != expected {
            return Err(Error::format(
                &file,
                format!("size mismatch: expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        let pixels: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(&file, "non-finite pixel"));
        }
        slices.push(SliceImage {
            width: e.dims[1],
            height: e.dims[0],
            spacing: e.spacing,
            pose: e.pose,
            pixels,
        });
        splits.push(e.split);
    }
    Ok(SliceDataset { slices, splits })
}

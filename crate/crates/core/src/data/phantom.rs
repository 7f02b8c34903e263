//! Synthetic ground-truth volumes.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::volume::Volume;
use crate::error::{Error, Result};
use crate::model::{cholesky, logit, GaussianCloud, DEFAULT_BETA, RAW_LAYOUT};
use crate::pose::ProbePose;
use crate::rasterizer::{render_naive, SliceSpec};

pub const MIN_PHANTOM_DIM: usize = 8;
pub const DEFAULT_BLOBS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    /// Nested smooth ellipsoid shells with correlated multiplicative speckle.
    Shells,
    /// Random anisotropic Gaussians rendered with the splatting model itself.
    Blobs,
    /// Axis-aligned contrast blocks.
    Checker,
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shells" => Ok(Self::Shells),
            "blobs" => Ok(Self::Blobs),
            "checker" => Ok(Self::Checker),
            other => Err(Error::invalid(format!(
                "unknown phantom kind {other:?} (expected shells|blobs|checker)"
            ))),
        }
    }
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Shells => "shells",
            Self::Blobs => "blobs",
            Self::Checker => "checker",
        })
    }
}

/// Generates a phantom of `dims = [depth, height, width]`. Deterministic per seed.
pub fn make_phantom(kind: PhantomKind, dims: [usize; 3], spacing: f64, seed: u64) -> Result<Volume> {
    if let Some(&d) = dims.iter().find(|&&d| d < MIN_PHANTOM_DIM) {
        return Err(Error::invalid(format!(
            "phantom dims must be ≥ {MIN_PHANTOM_DIM} per axis, got {d}"
        )));
    }
    if !(spacing > 0.0) {
        return Err(Error::invalid(format!("spacing must be > 0, got {spacing}")));
    }
    match kind {
        PhantomKind::Blobs => {
            let cloud = blobs_cloud(dims, spacing, seed, DEFAULT_BLOBS)?;
            blobs_volume(&cloud, dims, spacing)
        }
        PhantomKind::Shells => shells(dims, spacing, seed),
        PhantomKind::Checker => checker(dims, spacing),
    }
}

/// The generating Gaussians of the "blobs" phantom, in world mm.
pub fn blobs_cloud(dims: [usize; 3], spacing: f64, seed: u64, count: usize) -> Result<GaussianCloud<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = [dims[2], dims[1], dims[0]].map(|n| n as f64 * spacing);
    let min_extent = extent.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut cloud = GaussianCloud::empty(DEFAULT_BETA);
    cloud.bg_intensity_raw = logit(0.02);
    cloud.bg_opacity_raw = logit(0.018);
    for _ in 0..count {
        let mean = extent.map(|e| rng.random_range(-0.3 * e..0.3 * e));
        let sigma: [f64; 3] =
            std::array::from_fn(|_| rng.random_range(0.05 * min_extent..0.13 * min_extent));
        let rot = ProbePose::from_euler_zyx_deg(
            rng.random_range(-180.0..180.0),
            rng.random_range(-90.0..90.0),
            rng.random_range(-180.0..180.0),
            [0.0; 3],
        );
        let r = rot.rotation();
        let mut a = [[0.0; 3]; 3];
        for (i, row) in a.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| r[i][k] * r[j][k] / (sigma[k] * sigma[k])).sum();
            }
        }
        let l = cholesky(&a)?;
        let mut raw = [0.0; 6];
        for (slot, &(row, col)) in RAW_LAYOUT.iter().enumerate() {
            raw[slot] = if row == col {
                (l[row][row] - cloud.beta).max(0.0).sqrt()
            } else {
                l[row][col]
            };
        }
        let intensity = rng.random_range(0.35..0.95);
        let alpha = rng.random_range(0.6..0.95);
        cloud.push(mean, raw, logit(intensity), logit(alpha));
    }
    Ok(cloud)
}

/// Evaluates a cloud at every voxel centre (one axial plane at a time).
pub fn blobs_volume(cloud: &GaussianCloud<f64>, dims: [usize; 3], spacing: f64) -> Result<Volume> {
    let [d, h, w] = dims;
    let mut voxels = Vec::with_capacity(d * h * w);
    for k in 0..d {
        let z = (k as f64 - (d as f64 - 1.0) / 2.0) * spacing;
        let spec = SliceSpec::new(w, h, spacing, ProbePose::axial(z))?;
        voxels.extend(render_naive(cloud, &spec).into_iter().map(|v| v as f32));
    }
    Volume::new(dims, spacing, voxels)
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Lattice noise in `[-1, 1]`, trilinearly interpolated between random
/// values on a grid with the given cell size (in voxels).
struct LatticeNoise {
    cell: f64,
    n: [usize; 3],
    values: Vec<f64>,
}

impl LatticeNoise {
    fn new(dims: [usize; 3], cell: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = dims.map(|d| (d as f64 / cell).ceil() as usize + 2);
        let values = (0..n.iter().product::<usize>())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Self { cell, n, values }
    }

    fn at(&self, k: usize, j: usize, i: usize) -> f64 {
        let pos = [k, j, i].map(|v| v as f64 / self.cell);
        let base = pos.map(|p| p.floor() as usize);
        let frac = [0, 1, 2].map(|a| pos[a] - base[a] as f64);
        let mut acc = 0.0;
        for corner in 0..8 {
            let off = [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
            let mut wgt = 1.0;
            for a in 0..3 {
                wgt *= if off[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            let idx = ((base[0] + off[0]) * self.n[1] + base[1] + off[1]) * self.n[2] + base[2] + off[2];
            acc += wgt * self.values[idx];
        }
        acc
    }
}

fn shells(dims: [usize; 3], spacing: f64, seed: u64) -> Result<Volume> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [d, h, w] = dims;
    let vol = Volume::filled(dims, spacing, 0.0)?;
    let half = vol.extent_mm().map(|e| e / 2.0);
    let jitter = |rng: &mut ChaCha8Rng| rng.random_range(0.95..1.05);
    let outer = [0.82 * half[0] * jitter(&mut rng), 0.72 * half[1] * jitter(&mut rng), 0.66 * half[2] * jitter(&mut rng)];
    let inner_center = [0.12 * half[0], -0.08 * half[1], 0.05 * half[2]].map(|v| v * jitter(&mut rng));
    let inner = outer.map(|a| 0.5 * a);
    let noise = LatticeNoise::new(dims, (dims.iter().min().copied().unwrap_or(8) as f64 / 12.0).max(2.0), &mut rng);
    let radius = |p: &[f64; 3], c: &[f64; 3], axes: &[f64; 3]| -> f64 {
        (0..3).map(|a| ((p[a] - c[a]) / axes[a]).powi(2)).sum::<f64>().sqrt()
    };
    let mut voxels = Vec::with_capacity(d * h * w);
    for k in 0..d {
        for j in 0..h {
            for i in 0..w {
                let p = vol.voxel_center(k, j, i);
                let r_out = radius(&p, &[0.0; 3], &outer);
                let r_in = radius(&p, &inner_center, &inner);
                let fill = 0.3 * (1.0 - smoothstep(0.88, 1.0, r_out));
                let skull = 0.6 * (-((r_out - 1.0) / 0.07).powi(2)).exp();
                let core = 0.35 * (-((r_in - 1.0) / 0.12).powi(2)).exp();
                let base = fill + skull + core;
                let speckle = 1.0 + 0.2 * noise.at(k, j, i);
                voxels.push((base * speckle).clamp(0.0, 1.0) as f32);
            }
        }
    }
    Volume::new(dims, spacing, voxels)
}

fn checker(dims: [usize; 3], spacing: f64) -> Result<Volume> {
    let block = dims.map(|n| (n / 4).max(1));
    let [d, h, w] = dims;
    let mut voxels = Vec::with_capacity(d * h * w);
    for k in 0..d {
        for j in 0..h {
            for i in 0..w {
                let parity = (k / block[0] + j / block[1] + i / block[2]) % 2;
                voxels.push(if parity == 0 { 0.2 } else { 0.8 });
            }
        }
    }
    Volume::new(dims, spacing, voxels)
}

/// Number of local maxima of a smoothed histogram holding ≥ 1% of voxels.
pub fn histogram_modes(volume: &Volume, bins: usize) -> usize {
    let mut hist = vec![0usize; bins];
    for &v in &volume.voxels {
        hist[((v as f64 * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let smooth: Vec<f64> = (0..bins)
        .map(|b| {
            let lo = b.saturating_sub(1);
            let hi = (b + 1).min(bins - 1);
            (lo..=hi).map(|x| hist[x] as f64).sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let floor = 0.01 * volume.voxels.len() as f64;
    (0..bins)
        .filter(|&b| {
            let left = if b == 0 { -1.0 } else { smooth[b - 1] };
            let right = if b + 1 == bins { -1.0 } else { smooth[b + 1] };
            smooth[b] >= floor && smooth[b] > left && smooth[b] >= right
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;

    fn direct_eval(cloud: &GaussianCloud<f64>, x: &[f64; 3]) -> f64 {
        let (mut num, mut sum) = (cloud.bg_alpha() * cloud.bg_intensity(), cloud.bg_alpha());
        for i in 0..cloud.len() {
            let d = linalg::sub(x, &cloud.means[i]);
            let a = cloud.l_factor(i).precision();
            let q = linalg::dot(&d, &linalg::mat_vec(&a, &d));
            let w = cloud.alpha(i) * (-0.5 * q).exp();
            num += w * cloud.intensity(i);
            sum += w;
        }
        num / sum
    }

    #[test]
    fn blobs_match_direct_evaluation() {
        let dims = [16, 18, 20];
        let cloud = blobs_cloud(dims, 0.6, 7, 5).unwrap();
        let vol = blobs_volume(&cloud, dims, 0.6).unwrap();
        for k in 0..dims[0] {
            for j in 0..dims[1] {
                for i in 0..dims[2] {
                    let expected = direct_eval(&cloud, &vol.voxel_center(k, j, i));
                    assert!((vol.at(k, j, i) as f64 - expected).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        for kind in [PhantomKind::Shells, PhantomKind::Blobs, PhantomKind::Checker] {
            let a = make_phantom(kind, [12, 12, 12], 0.6, 3).unwrap();
            let b = make_phantom(kind, [12, 12, 12], 0.6, 3).unwrap();
            assert_eq!(a, b);
        }
        let a = make_phantom(PhantomKind::Shells, [12, 12, 12], 0.6, 3).unwrap();
        let b = make_phantom(PhantomKind::Shells, [12, 12, 12], 0.6, 4).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn shells_histogram_is_multimodal() {
        let vol = make_phantom(PhantomKind::Shells, [48, 48, 48], 0.6, 1).unwrap();
        assert!(histogram_modes(&vol, 32) >= 2);
    }

    #[test]
    fn checker_blocks() {
        let vol = make_phantom(PhantomKind::Checker, [8, 8, 8], 1.0, 0).unwrap();
        assert_eq!(vol.at(0, 0, 0), 0.2);
        assert_eq!(vol.at(0, 0, 2), 0.8);
        assert_eq!(vol.at(2, 2, 0), 0.2);
    }

    #[test]
    fn rejects_small_dims() {
        assert!(make_phantom(PhantomKind::Shells, [4, 16, 16], 0.6, 0).is_err());
        assert!("cube".parse::<PhantomKind>().is_err());
        assert_eq!("blobs".parse::<PhantomKind>().unwrap(), PhantomKind::Blobs);
    }
}

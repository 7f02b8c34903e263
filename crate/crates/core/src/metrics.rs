//! Image-quality metrics and the orthogonal-view evaluation protocol.

use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_slice, SliceImage, Volume};
use crate::error::{Error, Result};
use crate::model::GaussianCloud;
use crate::pose::ProbePose;
use crate::rasterizer::{render_slice, RenderOptions, SliceSpec};
use crate::real::Real;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
const C1: f64 = SSIM_K1 * SSIM_K1;
const C2: f64 = SSIM_K2 * SSIM_K2;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - r;
        *t = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.map(|t| t / sum)
}

/// Separable 'valid' correlation of a `w × h` image with the window.
fn filter_valid(img: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &img[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + SSIM_WINDOW]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| taps[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters a window map back onto the image grid.
fn filter_adjoint(map: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut cols = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let m = map[y * ow + x];
            for k in 0..SSIM_WINDOW {
                cols[(y + k) * ow + x] += taps[k] * m;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let m = cols[y * ow + x];
            for k in 0..SSIM_WINDOW {
                out[y * w + x + k] += taps[k] * m;
            }
        }
    }
    out
}

fn check_dims(a_len: usize, b_len: usize, width: usize, height: usize) -> Result<()> {
    if a_len != width * height || b_len != width * height {
        return Err(Error::DimensionMismatch {
            expected: format!("{width}×{height} = {} pixels", width * height),
            actual: format!("{a_len} and {b_len}"),
        });
    }
    Ok(())
}

struct SsimMaps {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    b1: Vec<f64>,
    b2: Vec<f64>,
}

fn ssim_maps(x: &[f64], y: &[f64], w: usize, h: usize) -> SsimMaps {
    let taps = ssim_taps();
    let mu_x = filter_valid(x, w, h, &taps);
    let mu_y = filter_valid(y, w, h, &taps);
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let m_xx = filter_valid(&sq(x, x), w, h, &taps);
    let m_yy = filter_valid(&sq(y, y), w, h, &taps);
    let m_xy = filter_valid(&sq(x, y), w, h, &taps);
    let n = mu_x.len();
    let (mut a1, mut a2, mut b1, mut b2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for p in 0..n {
        let (mx, my) = (mu_x[p], mu_y[p]);
        a1[p] = 2.0 * mx * my + C1;
        a2[p] = 2.0 * (m_xy[p] - mx * my) + C2;
        b1[p] = mx * mx + my * my + C1;
        b2[p] = (m_xx[p] - mx * mx) + (m_yy[p] - my * my) + C2;
    }
    SsimMaps { mu_x, mu_y, a1, a2, b1, b2 }
}

fn check_window(width: usize, height: usize) -> Result<()> {
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {width}×{height}"
        )));
    }
    Ok(())
}

fn to_f64<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64()).collect()
}

/// Mean SSIM over all valid windows of two row-major `width × height` images.
pub fn ssim_pixels<T: Real>(a: &[T], b: &[T], width: usize, height: usize) -> Result<f64> {
    check_dims(a.len(), b.len(), width, height)?;
    check_window(width, height)?;
    let m = ssim_maps(&to_f64(a), &to_f64(b), width, height);
    let n = m.a1.len();
    let total: f64 = (0..n).map(|p| m.a1[p] * m.a2[p] / (m.b1[p] * m.b2[p])).sum();
    Ok(total / n as f64)
}

/// Mean SSIM together with its gradient with respect to the first image.
pub fn ssim_with_grad<T: Real>(x: &[T], y: &[T], width: usize, height: usize) -> Result<(f64, Vec<f64>)> {
    check_dims(x.len(), y.len(), width, height)?;
    check_window(width, height)?;
    let (xf, yf) = (to_f64(x), to_f64(y));
    let m = ssim_maps(&xf, &yf, width, height);
    let n = m.a1.len();
    let inv_n = 1.0 / n as f64;
    let (mut da, mut db, mut dc) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut total = 0.0;
    for p in 0..n {
        let s = m.a1[p] * m.a2[p] / (m.b1[p] * m.b2[p]);
        total += s;
        let (mx, my) = (m.mu_x[p], m.mu_y[p]);
        // ∂S/∂μx with the raw second moments held fixed
        da[p] = inv_n * s * (2.0 * my / m.a1[p] - 2.0 * my / m.a2[p] - 2.0 * mx / m.b1[p] + 2.0 * mx / m.b2[p]);
        // ∂S/∂E[x²] and ∂S/∂E[xy]
        db[p] = -inv_n * s / m.b2[p];
        dc[p] = inv_n * 2.0 * s / m.a2[p];
    }
    let taps = ssim_taps();
    let ga = filter_adjoint(&da, width, height, &taps);
    let gb = filter_adjoint(&db, width, height, &taps);
    let gc = filter_adjoint(&dc, width, height, &taps);
    let grad = (0..xf.len()).map(|k| ga[k] + 2.0 * xf[k] * gb[k] + yf[k] * gc[k]).collect();
    Ok((total * inv_n, grad))
}

pub fn ssim(a: &SliceImage, b: &SliceImage) -> Result<f64> {
    check_same_shape(a, b)?;
    ssim_pixels(&a.pixels, &b.pixels, a.width, a.height)
}

fn check_same_shape(a: &SliceImage, b: &SliceImage) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}×{}", a.width, a.height),
            actual: format!("{}×{}", b.width, b.height),
        });
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB for range-1 images; `+∞` when identical.
pub fn psnr_pixels<T: Real>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} pixels", a.len()),
            actual: format!("{} pixels", b.len()),
        });
    }
    let mse = a.iter().zip(b).map(|(p, q)| (p.to_f64() - q.to_f64()).powi(2)).sum::<f64>() / a.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

pub fn psnr(a: &SliceImage, b: &SliceImage) -> Result<f64> {
    check_same_shape(a, b)?;
    psnr_pixels(&a.pixels, &b.pixels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaneFamily {
    Axial,
    Coronal,
    Sagittal,
}

impl PlaneFamily {
    pub const ALL: [PlaneFamily; 3] = [PlaneFamily::Axial, PlaneFamily::Coronal, PlaneFamily::Sagittal];
}

/// `n` voxel-aligned planes spread evenly along an axis of `len` voxels.
pub fn plane_indices(n: usize, len: usize) -> Vec<usize> {
    (0..n).map(|k| ((2 * k + 1) * len / (2 * n)).min(len - 1)).collect()
}

/// Slice geometry of voxel plane `index` of a family, matching the volume grid.
pub fn family_spec(volume: &Volume, family: PlaneFamily, index: usize) -> SliceSpec {
    let (d, h, w) = (volume.depth(), volume.height(), volume.width());
    let s = volume.spacing;
    let (width, height, pose) = match family {
        PlaneFamily::Axial => (w, h, ProbePose::axial(volume.voxel_center(index, 0, 0)[2])),
        PlaneFamily::Coronal => (w, d, ProbePose::coronal(volume.voxel_center(0, index, 0)[1])),
        PlaneFamily::Sagittal => (h, d, ProbePose::sagittal(volume.voxel_center(0, 0, index)[0])),
    };
    SliceSpec { width, height, spacing: s, pose }
}

fn family_len(volume: &Volume, family: PlaneFamily) -> usize {
    match family {
        PlaneFamily::Axial => volume.depth(),
        PlaneFamily::Coronal => volume.height(),
        PlaneFamily::Sagittal => volume.width(),
    }
}

/// Ground-truth views of one family.
pub fn family_views(volume: &Volume, family: PlaneFamily, n: usize) -> Vec<SliceImage> {
    plane_indices(n, family_len(volume, family))
        .into_iter()
        .map(|i| sample_slice(volume, &family_spec(volume, family, i)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SliceStats {
    pub count: usize,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    /// Mean and std over slices with finite PSNR.
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub psnr_infinite: usize,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// SSIM/PSNR statistics of `cloud` against the given ground-truth slices.
pub fn evaluate_slices(cloud: &GaussianCloud<f32>, truth: &[SliceImage], opts: &RenderOptions) -> Result<SliceStats> {
    let scores: Vec<(f64, f64)> = truth
        .par_iter()
        .map(|gt| {
            let img = render_slice(cloud, &gt.spec(), opts)?;
            Ok((ssim(&img, gt)?, psnr(&img, gt)?))
        })
        .collect::<Result<_>>()?;
    Ok(stats(&scores))
}

fn stats(scores: &[(f64, f64)]) -> SliceStats {
    let ssims: Vec<f64> = scores.iter().map(|s| s.0).collect();
    let finite: Vec<f64> = scores.iter().map(|s| s.1).filter(|p| p.is_finite()).collect();
    let (ssim_mean, ssim_std) = mean_std(&ssims);
    let (psnr_mean, psnr_std) = mean_std(&finite);
    SliceStats {
        count: scores.len(),
        ssim_mean,
        ssim_std,
        psnr_mean,
        psnr_std,
        psnr_infinite: scores.len() - finite.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub axial: SliceStats,
    pub coronal: SliceStats,
    pub sagittal: SliceStats,
    pub n_gaussians: usize,
    pub timestamp_unix_s: u64,
    pub note: String,
}

impl EvalReport {
    pub fn family(&self, f: PlaneFamily) -> &SliceStats {
        match f {
            PlaneFamily::Axial => &self.axial,
            PlaneFamily::Coronal => &self.coronal,
            PlaneFamily::Sagittal => &self.sagittal,
        }
    }

    /// Slice-count-weighted mean SSIM over the given families.
    pub fn mean_ssim(&self, families: &[PlaneFamily]) -> f64 {
        let (mut sum, mut n) = (0.0, 0usize);
        for &f in families {
            let s = self.family(f);
            sum += s.ssim_mean * s.count as f64;
            n += s.count;
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Renders `n_per_axis` voxel-aligned planes per orthogonal family and
/// scores them against the volume.
pub fn evaluate_views(cloud: &GaussianCloud<f32>, volume: &Volume, n_per_axis: usize, opts: &RenderOptions) -> Result<EvalReport> {
    if n_per_axis == 0 {
        return Err(Error::invalid("n_per_axis must be positive"));
    }
    let mut per_family = Vec::with_capacity(3);
    for family in PlaneFamily::ALL {
        let n = n_per_axis.min(family_len(volume, family));
        per_family.push(evaluate_slices(cloud, &family_views(volume, family, n), opts)?);
    }
    Ok(EvalReport {
        axial: per_family[0],
        coronal: per_family[1],
        sagittal: per_family[2],
        n_gaussians: cloud.len(),
        timestamp_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        note: "LPIPS not computed".to_string(),
    })
}

/// Best SSIM any constant image achieves against `truth`, averaged over
/// slices; candidates are black and the slice mean.
pub fn constant_baseline_ssim(truth: &[SliceImage]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::invalid("no slices"));
    }
    let mut total = 0.0;
    for gt in truth {
        let mean = gt.pixels.iter().map(|&p| p as f64).sum::<f64>() / gt.pixels.len() as f64;
        let best = [0.0, mean]
            .iter()
            .map(|&c| {
                let img = SliceImage::constant(gt.width, gt.height, gt.spacing, gt.pose, c as f32);
                ssim(&img, gt)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        total += best;
    }
    Ok(total / truth.len() as f64)
}

//! Slice rendering by plane intersection.
//!
//! Rendering runs in two phases. Phase 1 visits every Gaussian, moves it into
//! the probe frame, computes the axis-aligned box around its `p`-mass
//! ellipsoid and rejects it unless the box straddles the probe plane and
//! overlaps the image. The accepted indices are compacted into a dense list.
//! Phase 2 splits that list evenly across workers; each worker evaluates its
//! Gaussians only at the pixel centers inside the in-plane part of the box and
//! adds into shared per-pixel accumulators. Accumulation is order-independent,
//! so no depth sorting is needed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::SliceImage;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat3, Vec3};
use crate::model::{GaussianCloud, ProbeFrameGaussian};
use crate::pose::ProbePose;
use crate::real::Real;

pub const DEFAULT_P_MASS: f64 = 0.95;

/// Number of private accumulation buffers in [`ExecMode::Deterministic`].
const DETERMINISTIC_CHUNKS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub width: usize,
    pub height: usize,
    /// mm per pixel.
    pub spacing: f64,
    pub pose: ProbePose,
}

impl SliceSpec {
    pub fn new(width: usize, height: usize, spacing: f64, pose: ProbePose) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("slice dims must be ≥ 1, got {width}×{height}")));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::invalid(format!("spacing must be > 0, got {spacing}")));
        }
        Ok(Self {
            width,
            height,
            spacing,
            pose,
        })
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Centre of the image in pixel units.
    #[inline]
    pub(crate) fn center(&self) -> (f64, f64) {
        (
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        )
    }

    /// In-plane probe coordinates (mm) of pixel `(u, v)`; the image centre
    /// maps to the origin.
    pub fn pixel_to_plane(&self, u: usize, v: usize) -> Result<[f64; 2]> {
        if u >= self.width || v >= self.height {
            return Err(Error::invalid(format!(
                "pixel ({u}, {v}) outside {}×{} slice",
                self.width, self.height
            )));
        }
        Ok(self.plane_coord(u, v))
    }

    #[inline]
    pub(crate) fn plane_coord(&self, u: usize, v: usize) -> [f64; 2] {
        let (cx, cy) = self.center();
        [(u as f64 - cx) * self.spacing, (v as f64 - cy) * self.spacing]
    }

    /// World position of pixel `(u, v)`.
    pub fn pixel_to_world(&self, u: usize, v: usize) -> Vec3<f64> {
        let [x, y] = self.plane_coord(u, v);
        self.pose.transform_point(&[x, y, 0.0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    /// Single-threaded, bit-reproducible.
    Sequential,
    /// Parallel with atomic accumulation; summation order varies run to run.
    Parallel,
    /// Parallel over a fixed partition with private buffers merged in order;
    /// bit-reproducible regardless of thread count.
    #[default]
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Probability mass enclosed by each Gaussian's cut-off ellipsoid.
    pub p_mass: f64,
    pub mode: ExecMode,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            p_mass: DEFAULT_P_MASS,
            mode: ExecMode::Deterministic,
        }
    }
}

impl RenderOptions {
    pub fn new(p_mass: f64, mode: ExecMode) -> Self {
        Self { p_mass, mode }
    }
}

/// Quantile of the χ² distribution with 3 degrees of freedom: the squared
/// Mahalanobis radius enclosing mass `p`.
pub fn chi_square_3(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("mass fraction must be in (0, 1), got {p}")));
    }
    let dist = ChiSquared::new(3.0).expect("3 degrees of freedom");
    Ok(dist.inverse_cdf(p))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox3<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Real> BoundingBox3<T> {
    #[inline]
    pub fn straddles_plane(&self) -> bool {
        self.min[2] <= T::ZERO && self.max[2] >= T::ZERO
    }
}

/// Axis-aligned box around `{δ : δᵀAδ ≤ χ²}` with half-widths
/// `sqrt(χ²·Σⱼⱼ)`, where `Σ` is the probe-frame covariance.
pub fn bounding_box_chi2<T: Real>(mean: &Vec3<T>, cov_diag: &Vec3<T>, chi2: T) -> BoundingBox3<T> {
    let half = cov_diag.map(|s| (chi2 * s).sqrt());
    BoundingBox3 {
        min: [mean[0] - half[0], mean[1] - half[1], mean[2] - half[2]],
        max: [mean[0] + half[0], mean[1] + half[1], mean[2] + half[2]],
    }
}

pub fn bounding_box<T: Real>(g: &ProbeFrameGaussian<T>, p_mass: f64) -> Result<BoundingBox3<T>> {
    let chi2 = T::from_f64(chi_square_3(p_mass)?);
    Ok(bounding_box_chi2(&g.mean_probe, &g.covariance_diagonal(), chi2))
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub u0: usize,
    pub u1: usize,
    pub v0: usize,
    pub v1: usize,
}

impl PixelRect {
    pub fn contains(&self, u: usize, v: usize) -> bool {
        (self.u0..=self.u1).contains(&u) && (self.v0..=self.v1).contains(&v)
    }

    pub fn area(&self) -> usize {
        (self.u1 - self.u0 + 1) * (self.v1 - self.v0 + 1)
    }
}

/// Pixel centres inside the in-plane extent of `bbox`, clamped to the image;
/// `None` if there are none.
pub fn footprint<T: Real>(bbox: &BoundingBox3<T>, spec: &SliceSpec) -> Option<PixelRect> {
    let (cx, cy) = spec.center();
    let axis = |lo: T, hi: T, c: f64, n: usize| -> Option<(usize, usize)> {
        let lo = (lo.to_f64() / spec.spacing + c).ceil();
        let hi = (hi.to_f64() / spec.spacing + c).floor();
        let last = (n - 1) as f64;
        if !(lo <= hi) || hi < 0.0 || lo > last {
            return None;
        }
        Some((lo.max(0.0) as usize, hi.min(last) as usize))
    };
    let (u0, u1) = axis(bbox.min[0], bbox.max[0], cx, spec.width)?;
    let (v0, v1) = axis(bbox.min[1], bbox.max[1], cy, spec.height)?;
    Some(PixelRect { u0, u1, v0, v1 })
}

/// Phase-1 acceptance: the box straddles the plane (closed interval) and its
/// in-plane footprint covers at least one pixel centre.
pub fn cull<T: Real>(boxes: &[BoundingBox3<T>], spec: &SliceSpec) -> Vec<bool> {
    boxes
        .iter()
        .map(|b| b.straddles_plane() && footprint(b, spec).is_some())
        .collect()
}

/// Ascending indices of the set entries.
pub fn compact(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &keep)| keep.then_some(i))
        .collect()
}

/// Per-Gaussian state shared by the forward and backward passes.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Prepared<T> {
    pub probe: ProbeFrameGaussian<T>,
    pub bbox: BoundingBox3<T>,
    pub alpha: T,
    pub intensity: T,
}

/// World → probe rotation and translation in the working precision.
pub(crate) fn world_to_probe<T: Real>(pose: &ProbePose) -> (Mat3<T>, Vec3<T>) {
    let inv = pose.inverse();
    (linalg::cast_mat(inv.rotation()), linalg::cast_vec(inv.translation()))
}

#[inline]
pub(crate) fn prepare<T: Real>(
    cloud: &GaussianCloud<T>,
    i: usize,
    rot: &Mat3<T>,
    trans: &Vec3<T>,
    chi2: T,
) -> Prepared<T> {
    let l = cloud.l_factor(i);
    let mean_probe = linalg::add(&linalg::mat_vec(rot, &cloud.means[i]), trans);
    let l_probe = linalg::mat_mul(rot, l.matrix());
    // probe covariance diagonal = squared row norms of R_W·L⁻ᵀ
    let m = linalg::mat_mul(rot, &linalg::transpose(&l.inverse()));
    let cov_diag = [0, 1, 2].map(|j| linalg::dot(&m[j], &m[j]));
    Prepared {
        probe: ProbeFrameGaussian {
            mean_probe,
            l_probe,
            precision_probe: linalg::gram(&l_probe),
        },
        bbox: bounding_box_chi2(&mean_probe, &cov_diag, chi2),
        alpha: cloud.alpha(i),
        intensity: cloud.intensity(i),
    }
}

/// Accumulators and retained state of one forward pass.
#[derive(Debug, Clone)]
pub struct RenderBuffers<T> {
    pub width: usize,
    pub height: usize,
    /// `Σ α̂ᵢcᵢ + α_BG·c_BG` per pixel.
    pub intensity_num: Vec<T>,
    /// `Σ α̂ᵢ + α_BG` per pixel.
    pub opacity_sum: Vec<T>,
    /// Compacted accepted indices, ascending.
    pub accepted: Vec<usize>,
    /// Footprint of each accepted Gaussian, parallel to `accepted`.
    pub footprints: Vec<PixelRect>,
    pub p_mass: f64,
    pub chi2: f64,
    pub n_gaussians: usize,
}

impl<T: Real> RenderBuffers<T> {
    /// Rendered intensities `num / sum`, clamped to `[0, 1]`.
    pub fn pixels(&self) -> Vec<T> {
        self.intensity_num
            .iter()
            .zip(&self.opacity_sum)
            .map(|(&n, &s)| (n / s).max(T::ZERO).min(T::ONE))
            .collect()
    }
}

/// Splats one Gaussian into a pair of accumulators through `add`.
#[inline]
fn splat<T: Real>(
    p: &Prepared<T>,
    rect: &PixelRect,
    spec: &SliceSpec,
    mut add: impl FnMut(usize, T, T),
) {
    let (cx, cy) = spec.center();
    let a = &p.probe.precision_probe;
    let m = &p.probe.mean_probe;
    let two = T::from_f64(2.0);
    let half = T::from_f64(-0.5);
    let d2 = -m[2];
    for v in rect.v0..=rect.v1 {
        let d1 = T::from_f64((v as f64 - cy) * spec.spacing) - m[1];
        let row_const = a[1][1] * d1 * d1 + two * a[1][2] * d1 * d2 + a[2][2] * d2 * d2;
        let row_lin = two * (a[0][1] * d1 + a[0][2] * d2);
        let base = v * spec.width;
        for u in rect.u0..=rect.u1 {
            let d0 = T::from_f64((u as f64 - cx) * spec.spacing) - m[0];
            let q = a[0][0] * d0 * d0 + row_lin * d0 + row_const;
            let w = p.alpha * (half * q).exp();
            add(base + u, w * p.intensity, w);
        }
    }
}

/// Phase 1 for every Gaussian; returns the prepared state of accepted ones.
fn phase_one<T: Real>(
    cloud: &GaussianCloud<T>,
    spec: &SliceSpec,
    chi2: T,
    mode: ExecMode,
) -> Vec<Option<(Prepared<T>, PixelRect)>> {
    let (rot, trans) = world_to_probe::<T>(&spec.pose);
    let visit = |i: usize| {
        let p = prepare(cloud, i, &rot, &trans, chi2);
        if !p.bbox.straddles_plane() {
            return None;
        }
        footprint(&p.bbox, spec).map(|r| (p, r))
    };
    match mode {
        ExecMode::Sequential => (0..cloud.len()).map(visit).collect(),
        ExecMode::Parallel | ExecMode::Deterministic => {
            (0..cloud.len()).into_par_iter().map(visit).collect()
        }
    }
}

/// Forward pass producing accumulators plus the state the backward pass needs.
pub fn rasterize<T: Real>(
    cloud: &GaussianCloud<T>,
    spec: &SliceSpec,
    opts: &RenderOptions,
) -> Result<RenderBuffers<T>> {
    cloud.validate()?;
    let chi2 = chi_square_3(opts.p_mass)?;
    let phase1 = phase_one(cloud, spec, T::from_f64(chi2), opts.mode);
    let mask: Vec<bool> = phase1.iter().map(Option::is_some).collect();
    let accepted = compact(&mask);
    let work: Vec<(Prepared<T>, PixelRect)> = phase1.into_iter().flatten().collect();

    let n_pix = spec.num_pixels();
    let bg_alpha = cloud.bg_alpha();
    let bg_num = bg_alpha * cloud.bg_intensity();

    let (intensity_num, opacity_sum) = match opts.mode {
        ExecMode::Sequential => {
            let mut num = vec![bg_num; n_pix];
            let mut sum = vec![bg_alpha; n_pix];
            for (p, rect) in &work {
                splat(p, rect, spec, |k, n, s| {
                    num[k] += n;
                    sum[k] += s;
                });
            }
            (num, sum)
        }
        ExecMode::Parallel => {
            let num: Vec<T::Atomic> = (0..n_pix).map(|_| T::atomic_zero()).collect();
            let sum: Vec<T::Atomic> = (0..n_pix).map(|_| T::atomic_zero()).collect();
            let chunk = work.len().div_ceil(rayon::current_num_threads()).max(1);
            work.par_chunks(chunk).for_each(|part| {
                for (p, rect) in part {
                    splat(p, rect, spec, |k, n, s| {
                        T::atomic_add(&num[k], n);
                        T::atomic_add(&sum[k], s);
                    });
                }
            });
            (
                num.iter().map(|c| bg_num + T::atomic_load(c)).collect(),
                sum.iter().map(|c| bg_alpha + T::atomic_load(c)).collect(),
            )
        }
        ExecMode::Deterministic => {
            let chunk = work.len().div_ceil(DETERMINISTIC_CHUNKS).max(1);
            let partials: Vec<(Vec<T>, Vec<T>)> = work
                .par_chunks(chunk)
                .map(|part| {
                    let mut num = vec![T::ZERO; n_pix];
                    let mut sum = vec![T::ZERO; n_pix];
                    for (p, rect) in part {
                        splat(p, rect, spec, |k, n, s| {
                            num[k] += n;
                            sum[k] += s;
                        });
                    }
                    (num, sum)
                })
                .collect();
            let mut num = vec![bg_num; n_pix];
            let mut sum = vec![bg_alpha; n_pix];
            for (pn, ps) in &partials {
                for k in 0..n_pix {
                    num[k] += pn[k];
                    sum[k] += ps[k];
                }
            }
            (num, sum)
        }
    };

    Ok(RenderBuffers {
        width: spec.width,
        height: spec.height,
        intensity_num,
        opacity_sum,
        footprints: work.iter().map(|(_, r)| *r).collect(),
        accepted,
        p_mass: opts.p_mass,
        chi2,
        n_gaussians: cloud.len(),
    })
}

/// Renders the slice at `spec.pose` as an image in `[0, 1]`.
pub fn render_slice(
    cloud: &GaussianCloud<f32>,
    spec: &SliceSpec,
    opts: &RenderOptions,
) -> Result<SliceImage> {
    let buffers = rasterize(cloud, spec, opts)?;
    Ok(SliceImage {
        width: spec.width,
        height: spec.height,
        spacing: spec.spacing,
        pose: spec.pose,
        pixels: buffers.pixels(),
    })
}

/// Direct evaluation of every Gaussian at every pixel, in 64-bit. Used as
/// the reference for the bounded rasterizer.
pub fn render_naive(cloud: &GaussianCloud<f64>, spec: &SliceSpec) -> Vec<f64> {
    let (rot, trans) = world_to_probe::<f64>(&spec.pose);
    let probes: Vec<(ProbeFrameGaussian<f64>, f64, f64)> = (0..cloud.len())
        .map(|i| {
            let p = prepare(cloud, i, &rot, &trans, 1.0);
            (p.probe, p.alpha, p.intensity)
        })
        .collect();
    let bg_a = cloud.bg_alpha();
    let bg_c = cloud.bg_intensity();
    let mut out = Vec::with_capacity(spec.num_pixels());
    for v in 0..spec.height {
        for u in 0..spec.width {
            let x = spec.plane_coord(u, v);
            let (mut num, mut sum) = (bg_a * bg_c, bg_a);
            for (g, a, c) in &probes {
                let w = a * (-0.5 * g.mahalanobis_sq(x)).exp();
                num += w * c;
                sum += w;
            }
            out.push((num / sum).clamp(0.0, 1.0));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::logit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn isotropic(sigma: f64, mean: Vec3<f64>) -> ProbeFrameGaussian<f64> {
        let a = 1.0 / (sigma * sigma);
        ProbeFrameGaussian {
            mean_probe: mean,
            l_probe: [[a.sqrt(), 0.0, 0.0], [0.0, a.sqrt(), 0.0], [0.0, 0.0, a.sqrt()]],
            precision_probe: [[a, 0.0, 0.0], [0.0, a, 0.0], [0.0, 0.0, a]],
        }
    }

    fn spec160() -> SliceSpec {
        SliceSpec::new(160, 160, 0.6, ProbePose::identity()).unwrap()
    }

    #[test]
    fn pixel_to_plane_convention() {
        let spec = spec160();
        let [x, y] = spec.pixel_to_plane(0, 0).unwrap();
        assert!((x + 47.7).abs() < 1e-12 && (y + 47.7).abs() < 1e-12);
        let [x, y] = spec.pixel_to_plane(159, 0).unwrap();
        assert!((x - 47.7).abs() < 1e-12 && (y + 47.7).abs() < 1e-12);
        // odd size has an exact centre pixel
        let odd = SliceSpec::new(161, 161, 0.6, ProbePose::identity()).unwrap();
        assert_eq!(odd.pixel_to_plane(80, 80).unwrap(), [0.0, 0.0]);
        // even size: centre at 79.5
        assert_eq!(spec.center(), (79.5, 79.5));
        assert!(spec.pixel_to_plane(160, 0).is_err());
        assert!(spec.pixel_to_plane(0, 160).is_err());
    }

    #[test]
    fn slice_spec_validation() {
        assert!(SliceSpec::new(0, 4, 1.0, ProbePose::identity()).is_err());
        assert!(SliceSpec::new(4, 4, 0.0, ProbePose::identity()).is_err());
        assert!(SliceSpec::new(4, 4, f64::NAN, ProbePose::identity()).is_err());
    }

    #[test]
    fn chi_square_reference_values() {
        assert!((chi_square_3(0.95).unwrap() - 7.815).abs() < 1e-3);
        assert!((chi_square_3(0.9999).unwrap() - 21.108).abs() < 1e-2);
        assert!(chi_square_3(1.0).is_err());
        assert!(chi_square_3(0.0).is_err());
    }

    #[test]
    fn isotropic_box_half_widths() {
        let b = bounding_box(&isotropic(2.0, [0.0; 3]), 0.95).unwrap();
        for j in 0..3 {
            assert!((b.max[j] - 5.591).abs() < 1e-3);
            assert!((b.min[j] + 5.591).abs() < 1e-3);
        }
        let b = bounding_box(&isotropic(2.0, [0.0, 0.0, 1.0]), 0.95).unwrap();
        assert!((b.min[2] + 4.591).abs() < 1e-3 && (b.max[2] - 6.591).abs() < 1e-3);
        assert!(b.straddles_plane());
    }

    #[test]
    fn cull_cases() {
        let spec = spec160();
        let far = bounding_box(&isotropic(2.0, [0.0, 0.0, 10.0]), 0.95).unwrap();
        assert!((far.min[2] - 4.409).abs() < 1e-3);
        let on_plane = bounding_box(&isotropic(2.0, [3.0, -4.0, 0.0]), 0.95).unwrap();
        let edge = bounding_box(&isotropic(2.0, [0.0, 0.0, -5.59]), 0.95).unwrap();
        assert!(edge.max[2] > 0.0 && edge.max[2] < 0.002);
        let outside = bounding_box(&isotropic(2.0, [200.0, 0.0, 0.0]), 0.95).unwrap();
        assert_eq!(cull(&[far, on_plane, edge, outside], &spec), vec![false, true, true, false]);
    }

    #[test]
    fn tangent_box_is_accepted() {
        let b = BoundingBox3 {
            min: [-1.0, -1.0, 0.0],
            max: [1.0, 1.0, 2.0],
        };
        assert_eq!(cull(&[b], &spec160()), vec![true]);
    }

    #[test]
    fn compact_cases() {
        assert_eq!(compact(&[true, false, true, true]), vec![0, 2, 3]);
        assert!(compact(&[false, false]).is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let mask: Vec<bool> = (0..rng.random_range(0..50)).map(|_| rng.random()).collect();
            let mut expected = Vec::new();
            for (i, m) in mask.iter().enumerate() {
                if *m {
                    expected.push(i);
                }
            }
            assert_eq!(compact(&mask), expected);
        }
    }

    #[test]
    fn footprint_clamps_to_image() {
        let spec = SliceSpec::new(10, 10, 1.0, ProbePose::identity()).unwrap();
        let b = BoundingBox3 {
            min: [-100.0, 0.2, -1.0],
            max: [0.0, 0.4, 1.0],
        };
        // v range (0.2+4.5, 0.4+4.5) has no pixel centre
        assert_eq!(footprint(&b, &spec), None);
        let b = BoundingBox3 {
            min: [-100.0, -0.6, -1.0],
            max: [0.0, 0.6, 1.0],
        };
        assert_eq!(
            footprint(&b, &spec),
            Some(PixelRect {
                u0: 0,
                u1: 4,
                v0: 4,
                v1: 5
            })
        );
    }

    #[test]
    fn empty_cloud_is_background() {
        let mut cloud = GaussianCloud::<f32>::empty(0.01);
        cloud.bg_intensity_raw = 0.3;
        let img = render_slice(&cloud, &spec160(), &RenderOptions::default()).unwrap();
        let c = 0.3f32.sigmoid();
        assert!(img.pixels.iter().all(|&p| (p - c).abs() < 1e-7));
    }

    #[test]
    fn single_gaussian_centre_pixel() {
        let spec = SliceSpec::new(9, 9, 1.0, ProbePose::identity()).unwrap();
        let mut cloud = GaussianCloud::<f64>::empty(0.01);
        cloud.bg_intensity_raw = -40.0; // c_BG ≈ 0
        cloud.bg_opacity_raw = logit(0.018);
        cloud.push([0.0; 3], [1.0, 1.0, 1.0, 0.0, 0.0, 0.0], 40.0, logit(0.8));
        let buf = rasterize(&cloud, &spec, &RenderOptions::new(0.95, ExecMode::Sequential)).unwrap();
        let centre = buf.pixels()[4 * 9 + 4];
        assert!((centre - 0.8 / 0.818).abs() < 1e-9, "{centre}");
        assert!((centre - 0.9780).abs() < 1e-4);
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> GaussianCloud<f64> {
        let mut cloud = GaussianCloud::empty(0.01);
        cloud.bg_intensity_raw = rng.random_range(-2.0..2.0);
        cloud.bg_opacity_raw = rng.random_range(-4.0..-2.0);
        for _ in 0..n {
            let mean = [
                rng.random_range(-extent..extent),
                rng.random_range(-extent..extent),
                rng.random_range(-3.0..3.0),
            ];
            let raw = [
                rng.random_range(0.6..1.2),
                rng.random_range(0.6..1.2),
                rng.random_range(0.6..1.2),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            ];
            cloud.push(mean, raw, rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0));
        }
        cloud
    }

    #[test]
    fn identity_pose_matches_direct_world_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cloud = random_cloud(&mut rng, 30, 8.0);
        let spec = SliceSpec::new(24, 20, 0.8, ProbePose::identity()).unwrap();
        let buf = rasterize(&cloud, &spec, &RenderOptions::new(0.999999, ExecMode::Sequential)).unwrap();
        let pixels = buf.pixels();
        for v in 0..spec.height {
            for u in 0..spec.width {
                let x = spec.pixel_to_world(u, v);
                let (mut num, mut sum) = (cloud.bg_alpha() * cloud.bg_intensity(), cloud.bg_alpha());
                for i in 0..cloud.len() {
                    let a = cloud.l_factor(i).precision();
                    let d = linalg::sub(&x, &cloud.means[i]);
                    let q = linalg::dot(&d, &linalg::mat_vec(&a, &d));
                    let w = cloud.alpha(i) * (-0.5 * q).exp();
                    num += w * cloud.intensity(i);
                    sum += w;
                }
                assert!((pixels[v * spec.width + u] - num / sum).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn modes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cloud = random_cloud(&mut rng, 400, 12.0).cast::<f32>();
        let spec = SliceSpec::new(32, 32, 0.75, ProbePose::from_euler_zyx_deg(10.0, -5.0, 30.0, [0.5, 0.0, 0.3])).unwrap();
        let seq = rasterize(&cloud, &spec, &RenderOptions::new(0.95, ExecMode::Sequential)).unwrap();
        let par = rasterize(&cloud, &spec, &RenderOptions::new(0.95, ExecMode::Parallel)).unwrap();
        let det = rasterize(&cloud, &spec, &RenderOptions::new(0.95, ExecMode::Deterministic)).unwrap();
        assert_eq!(seq.accepted, par.accepted);
        assert_eq!(seq.accepted, det.accepted);
        for ((a, b), c) in seq.pixels().iter().zip(par.pixels()).zip(det.pixels()) {
            assert!((a - b).abs() <= 1e-5 && (a - c).abs() <= 1e-5);
        }
        let det2 = rasterize(&cloud, &spec, &RenderOptions::new(0.95, ExecMode::Deterministic)).unwrap();
        assert_eq!(det.pixels(), det2.pixels());
    }

    #[test]
    fn rigid_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cloud = random_cloud(&mut rng, 60, 8.0);
        let spec = SliceSpec::new(24, 24, 0.7, ProbePose::from_euler_zyx_deg(5.0, 0.0, 12.0, [0.0, 0.0, 0.4])).unwrap();
        let motion = ProbePose::from_euler_zyx_deg(33.0, -21.0, 75.0, [4.0, -2.0, 7.5]);
        let moved = cloud.rigidly_transformed(&motion).unwrap();
        let moved_spec = SliceSpec {
            pose: motion.compose(&spec.pose),
            ..spec
        };
        let opts = RenderOptions::new(0.9999, ExecMode::Sequential);
        let a = rasterize(&cloud, &spec, &opts).unwrap().pixels();
        let b = rasterize(&moved, &moved_spec, &opts).unwrap().pixels();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-5, "{x} vs {y}");
        }
    }

    #[test]
    fn bounded_close_to_naive_at_high_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cloud = random_cloud(&mut rng, 200, 10.0);
        let spec = SliceSpec::new(32, 32, 0.7, ProbePose::from_euler_zyx_deg(0.0, 20.0, 0.0, [0.0; 3])).unwrap();
        let naive = render_naive(&cloud, &spec);
        let bounded = rasterize(&cloud, &spec, &RenderOptions::new(0.9999, ExecMode::Sequential))
            .unwrap()
            .pixels();
        let worst = naive.iter().zip(&bounded).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-3, "{worst}");
    }

    #[test]
    fn output_range_and_denominator_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let cloud = random_cloud(&mut rng, 100, 10.0);
        let spec = SliceSpec::new(16, 16, 1.0, ProbePose::identity()).unwrap();
        let buf = rasterize(&cloud, &spec, &RenderOptions::new(0.95, ExecMode::Sequential)).unwrap();
        let bg = cloud.bg_alpha();
        assert!(buf.opacity_sum.iter().all(|&s| s >= bg));
        assert!(buf.pixels().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}

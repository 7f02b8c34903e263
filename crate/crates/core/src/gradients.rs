//! Analytic backward pass of the slice renderer and a finite-difference
//! verification harness.
//!
//! Per pixel, with `S = Σα̂ᵢ + α_BG` and `ĉ = (Σα̂ᵢcᵢ + α_BG·c_BG)/S`:
//!
//! ```text
//! ∂ĉ/∂cᵢ = α̂ᵢ/S        ∂ĉ/∂α̂ᵢ = (cᵢ − ĉ)/S
//! α̂ᵢ = αᵢ·exp(−q/2),   q = ‖Lᵀd‖²,   d = x_world − μ
//! ∂q/∂μ = −2·L·Lᵀd      ∂q/∂L = 2·d·(Lᵀd)ᵀ   (lower triangle)
//! ```
//!
//! Each accepted Gaussian is owned by exactly one worker, so its gradient
//! slot is written without synchronization and the result does not depend
//! on the execution mode.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Vec3};
use crate::model::GaussianCloud;
use crate::pose::ProbePose;
use crate::rasterizer::{rasterize, world_to_probe, ExecMode, PixelRect, RenderBuffers, RenderOptions, SliceSpec};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients<T> {
    pub d_means: Vec<[T; 3]>,
    pub d_l_raw: Vec<[T; 6]>,
    pub d_intensity_raw: Vec<T>,
    pub d_opacity_raw: Vec<T>,
    pub d_bg_intensity_raw: T,
    pub d_bg_opacity_raw: T,
}

impl<T: Real> ParamGradients<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_means: vec![[T::ZERO; 3]; n],
            d_l_raw: vec![[T::ZERO; 6]; n],
            d_intensity_raw: vec![T::ZERO; n],
            d_opacity_raw: vec![T::ZERO; n],
            d_bg_intensity_raw: T::ZERO,
            d_bg_opacity_raw: T::ZERO,
        }
    }

    pub fn len(&self) -> usize {
        self.d_means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_means.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.d_means.iter().flatten().all(|v| v.is_finite())
            && self.d_l_raw.iter().flatten().all(|v| v.is_finite())
            && self.d_intensity_raw.iter().all(|v| v.is_finite())
            && self.d_opacity_raw.iter().all(|v| v.is_finite())
            && self.d_bg_intensity_raw.is_finite()
            && self.d_bg_opacity_raw.is_finite()
    }

    /// Adds `other` into `self`.
    pub fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.d_means.iter_mut().zip(&other.d_means) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
        for (a, b) in self.d_l_raw.iter_mut().zip(&other.d_l_raw) {
            for k in 0..6 {
                a[k] += b[k];
            }
        }
        for (a, b) in self.d_intensity_raw.iter_mut().zip(&other.d_intensity_raw) {
            *a += *b;
        }
        for (a, b) in self.d_opacity_raw.iter_mut().zip(&other.d_opacity_raw) {
            *a += *b;
        }
        self.d_bg_intensity_raw += other.d_bg_intensity_raw;
        self.d_bg_opacity_raw += other.d_bg_opacity_raw;
    }

    /// Keeps the per-Gaussian rows whose `keep` flag is set.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        fn retain<V>(v: &mut Vec<V>, keep: &[bool]) {
            let mut it = keep.iter();
            v.retain(|_| *it.next().unwrap());
        }
        retain(&mut self.d_means, keep);
        retain(&mut self.d_l_raw, keep);
        retain(&mut self.d_intensity_raw, keep);
        retain(&mut self.d_opacity_raw, keep);
    }

    /// Appends `n` zero rows.
    pub fn extend_zeros(&mut self, n: usize) {
        let len = self.len() + n;
        self.d_means.resize(len, [T::ZERO; 3]);
        self.d_l_raw.resize(len, [T::ZERO; 6]);
        self.d_intensity_raw.resize(len, T::ZERO);
        self.d_opacity_raw.resize(len, T::ZERO);
    }

    /// All entries in group order: means, l_raw, intensity, opacity, background.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        out.extend(self.d_means.iter().flatten());
        out.extend(self.d_l_raw.iter().flatten());
        out.extend(&self.d_intensity_raw);
        out.extend(&self.d_opacity_raw);
        out.push(self.d_bg_intensity_raw);
        out.push(self.d_bg_opacity_raw);
        out
    }
}

struct GaussianGrad<T> {
    index: usize,
    d_mean: [T; 3],
    d_l_raw: [T; 6],
    d_intensity_raw: T,
    d_opacity_raw: T,
}

/// Per-pixel quantities shared by every Gaussian in the backward pass.
struct PixelTerms<T> {
    /// `g / S`.
    g_over_s: Vec<T>,
    /// Rendered value `ĉ = N / S`.
    c_hat: Vec<T>,
}

/// The probe plane in world coordinates: origin (image centre) and the
/// directions of increasing `u`, `v` and the plane normal.
struct Plane<T> {
    origin: Vec3<T>,
    e_u: Vec3<T>,
    e_v: Vec3<T>,
    normal: Vec3<T>,
}

fn backward_one<T: Real>(
    cloud: &GaussianCloud<T>,
    index: usize,
    rect: &PixelRect,
    spec: &SliceSpec,
    plane: &Plane<T>,
    px: &PixelTerms<T>,
) -> GaussianGrad<T> {
    let l = cloud.l_factor(index);
    let lm = l.matrix();
    let alpha = cloud.alpha(index);
    let c = cloud.intensity(index);
    let (cx, cy) = spec.center();
    let half = T::from_f64(-0.5);

    // Pixel offsets are taken relative to the in-plane projection of the
    // mean, so that d = d_ref + x·e_u + y·e_v with |d_ref| the distance of
    // the mean from the plane; this keeps every term small in f32.
    let rel = linalg::sub(&cloud.means[index], &plane.origin);
    let (x_ref, y_ref) = (linalg::dot(&plane.e_u, &rel), linalg::dot(&plane.e_v, &rel));
    let d_ref = linalg::scale(&plane.normal, -linalg::dot(&plane.normal, &rel));
    let w_ref = linalg::mat_t_vec(lm, &d_ref);
    let a = linalg::mat_t_vec(lm, &plane.e_u);
    let b = linalg::mat_t_vec(lm, &plane.e_v);

    let mut s0 = [T::ZERO; 3];
    let mut su = [T::ZERO; 3];
    let mut sv = [T::ZERO; 3];
    let mut d_alpha = T::ZERO;
    let mut d_c = T::ZERO;

    for v in rect.v0..=rect.v1 {
        let y = T::from_f64((v as f64 - cy) * spec.spacing) - y_ref;
        let w_row = [w_ref[0] + y * b[0], w_ref[1] + y * b[1], w_ref[2] + y * b[2]];
        let mut row0 = [T::ZERO; 3];
        let mut rowu = [T::ZERO; 3];
        for u in rect.u0..=rect.u1 {
            let k = v * spec.width + u;
            let gs = px.g_over_s[k];
            if gs == T::ZERO {
                continue;
            }
            let x = T::from_f64((u as f64 - cx) * spec.spacing) - x_ref;
            let w = [w_row[0] + x * a[0], w_row[1] + x * a[1], w_row[2] + x * a[2]];
            let falloff = (half * (w[0] * w[0] + w[1] * w[1] + w[2] * w[2])).exp();
            let a_hat = alpha * falloff;
            d_c += gs * a_hat;
            let d_ahat = gs * (c - px.c_hat[k]);
            d_alpha += d_ahat * falloff;
            let dq = d_ahat * a_hat * half;
            for j in 0..3 {
                row0[j] += dq * w[j];
                rowu[j] += dq * x * w[j];
            }
        }
        for j in 0..3 {
            s0[j] += row0[j];
            su[j] += rowu[j];
            sv[j] += y * row0[j];
        }
    }

    // Σ dq·d·wᵀ = d_ref·s0ᵀ + e_u·suᵀ + e_v·svᵀ
    let g = |j: usize, m: usize| d_ref[j] * s0[m] + plane.e_u[j] * su[m] + plane.e_v[j] * sv[m];
    let two = T::from_f64(2.0);
    let lw = linalg::mat_vec(lm, &s0);
    let raw = &cloud.l_raw[index];
    GaussianGrad {
        index,
        d_mean: [-two * lw[0], -two * lw[1], -two * lw[2]],
        d_l_raw: [
            two * g(0, 0) * two * raw[0],
            two * g(1, 1) * two * raw[1],
            two * g(2, 2) * two * raw[2],
            two * g(1, 0),
            two * g(2, 0),
            two * g(2, 1),
        ],
        d_intensity_raw: d_c * c * (T::ONE - c),
        d_opacity_raw: d_alpha * alpha * (T::ONE - alpha),
    }
}

/// Gradients of a scalar loss with respect to all trainable parameters,
/// given the loss gradient `d_pixels` with respect to the rendered pixels.
pub fn backward<T: Real>(
    cloud: &GaussianCloud<T>,
    spec: &SliceSpec,
    buffers: &RenderBuffers<T>,
    d_pixels: &[T],
    mode: ExecMode,
) -> Result<ParamGradients<T>> {
    let n_pix = spec.num_pixels();
    if buffers.width != spec.width || buffers.height != spec.height {
        return Err(Error::DimensionMismatch {
            expected: format!("{}×{} buffers", spec.width, spec.height),
            actual: format!("{}×{}", buffers.width, buffers.height),
        });
    }
    if d_pixels.len() != n_pix {
        return Err(Error::DimensionMismatch {
            expected: format!("{n_pix} pixel gradients"),
            actual: d_pixels.len().to_string(),
        });
    }
    if buffers.n_gaussians != cloud.len() || buffers.accepted.len() != buffers.footprints.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("buffers for {} Gaussians", cloud.len()),
            actual: format!("buffers for {}", buffers.n_gaussians),
        });
    }

    // rows of the world→probe rotation are the probe axes in world coordinates
    let (rot, _) = world_to_probe::<T>(&spec.pose);
    let plane = Plane {
        origin: linalg::cast_vec(spec.pose.translation()),
        e_u: rot[0],
        e_v: rot[1],
        normal: rot[2],
    };
    let px = PixelTerms {
        g_over_s: d_pixels.iter().zip(&buffers.opacity_sum).map(|(&g, &s)| g / s).collect(),
        c_hat: buffers.intensity_num.iter().zip(&buffers.opacity_sum).map(|(&n, &s)| n / s).collect(),
    };
    let work = |(&i, rect): (&usize, &PixelRect)| backward_one(cloud, i, rect, spec, &plane, &px);
    let per_gaussian: Vec<GaussianGrad<T>> = match mode {
        ExecMode::Sequential => buffers.accepted.iter().zip(&buffers.footprints).map(work).collect(),
        ExecMode::Parallel | ExecMode::Deterministic => buffers
            .accepted
            .par_iter()
            .zip(buffers.footprints.par_iter())
            .map(work)
            .collect(),
    };

    let mut grads = ParamGradients::zeros(cloud.len());
    for g in per_gaussian {
        grads.d_means[g.index] = g.d_mean;
        grads.d_l_raw[g.index] = g.d_l_raw;
        grads.d_intensity_raw[g.index] = g.d_intensity_raw;
        grads.d_opacity_raw[g.index] = g.d_opacity_raw;
    }

    let bg_a = cloud.bg_alpha();
    let bg_c = cloud.bg_intensity();
    let (mut d_bg_c, mut d_bg_a) = (T::ZERO, T::ZERO);
    for k in 0..n_pix {
        let g = d_pixels[k];
        if g == T::ZERO {
            continue;
        }
        let s = buffers.opacity_sum[k];
        let c_hat = buffers.intensity_num[k] / s;
        d_bg_c += g * bg_a / s;
        d_bg_a += g * (bg_c - c_hat) / s;
    }
    grads.d_bg_intensity_raw = d_bg_c * bg_c * (T::ONE - bg_c);
    grads.d_bg_opacity_raw = d_bg_a * bg_a * (T::ONE - bg_a);
    Ok(grads)
}

/// What the central differences are taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdReference {
    /// The truncated renderer with its accepted set and footprints frozen at
    /// the unperturbed parameters; this is the function the backward pass
    /// differentiates.
    SameSupport,
    /// Every Gaussian evaluated at every pixel.
    Untruncated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub h: f64,
    pub p_mass: f64,
    /// Drives the entry subsample when `max_entries_per_group` is set.
    pub seed: u64,
    pub max_entries_per_group: Option<usize>,
    pub reference: FdReference,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            p_mass: 0.9999,
            seed: 0,
            max_entries_per_group: None,
            reference: FdReference::SameSupport,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupError {
    /// Worst `|a − n| / (|a| + |n|)` over entries with `|a| + |n| > 1e-8`.
    pub max_rel: f64,
    /// `‖a − n‖ / ‖n‖` over the whole group.
    pub norm_rel: f64,
    pub compared: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub means: GroupError,
    pub l_raw: GroupError,
    pub intensity: GroupError,
    pub opacity: GroupError,
    pub background: GroupError,
}

impl GradCheckReport {
    pub fn groups(&self) -> [(&'static str, GroupError); 5] {
        [
            ("means", self.means),
            ("l_raw", self.l_raw),
            ("intensity", self.intensity),
            ("opacity", self.opacity),
            ("background", self.background),
        ]
    }

    pub fn worst_max_rel(&self) -> f64 {
        self.groups().iter().map(|(_, g)| g.max_rel).fold(0.0, f64::max)
    }
}

const REL_DENOMINATOR_FLOOR: f64 = 1e-8;

/// World-frame evaluator for the loss `Σ pixel²`, used by the finite
/// differences. Independent of the rasterizer's probe-frame code path.
struct FdEvaluator<'a> {
    cloud: GaussianCloud<f64>,
    pixels_world: Vec<Vec3<f64>>,
    /// Gaussians contributing at each pixel.
    per_pixel: Vec<Vec<usize>>,
    /// Pixels covered by each Gaussian.
    per_gaussian: Vec<Vec<usize>>,
    _spec: &'a SliceSpec,
}

impl<'a> FdEvaluator<'a> {
    fn new(cloud: &GaussianCloud<f64>, spec: &'a SliceSpec, buffers: &RenderBuffers<f64>, reference: FdReference) -> Self {
        let n_pix = spec.num_pixels();
        let mut pixels_world = Vec::with_capacity(n_pix);
        for v in 0..spec.height {
            for u in 0..spec.width {
                pixels_world.push(spec.pixel_to_world(u, v));
            }
        }
        let mut per_pixel = vec![Vec::new(); n_pix];
        let mut per_gaussian = vec![Vec::new(); cloud.len()];
        match reference {
            FdReference::SameSupport => {
                for (&i, rect) in buffers.accepted.iter().zip(&buffers.footprints) {
                    for v in rect.v0..=rect.v1 {
                        for u in rect.u0..=rect.u1 {
                            let k = v * spec.width + u;
                            per_pixel[k].push(i);
                            per_gaussian[i].push(k);
                        }
                    }
                }
            }
            FdReference::Untruncated => {
                for (k, list) in per_pixel.iter_mut().enumerate() {
                    list.extend(0..cloud.len());
                    for g in per_gaussian.iter_mut() {
                        g.push(k);
                    }
                }
            }
        }
        Self {
            cloud: cloud.clone(),
            pixels_world,
            per_pixel,
            per_gaussian,
            _spec: spec,
        }
    }

    fn pixel(&self, k: usize) -> f64 {
        let c = &self.cloud;
        let x = &self.pixels_world[k];
        let (mut num, mut sum) = (c.bg_alpha() * c.bg_intensity(), c.bg_alpha());
        for &i in &self.per_pixel[k] {
            let lm = *c.l_factor(i).matrix();
            let d = linalg::sub(x, &c.means[i]);
            let w = linalg::mat_t_vec(&lm, &d);
            let a = c.alpha(i) * (-0.5 * linalg::dot(&w, &w)).exp();
            num += a * c.intensity(i);
            sum += a;
        }
        (num / sum).clamp(0.0, 1.0)
    }

    /// Loss restricted to `pixels`.
    fn partial_loss(&self, pixels: &[usize]) -> f64 {
        pixels.iter().map(|&k| self.pixel(k).powi(2)).sum()
    }

    fn all_pixels(&self) -> Vec<usize> {
        (0..self.pixels_world.len()).collect()
    }
}

/// Parameter address within a cloud.
#[derive(Debug, Clone, Copy)]
enum Param {
    Mean(usize, usize),
    LRaw(usize, usize),
    Intensity(usize),
    Opacity(usize),
    BgIntensity,
    BgOpacity,
}

fn param_mut(cloud: &mut GaussianCloud<f64>, p: Param) -> &mut f64 {
    match p {
        Param::Mean(i, k) => &mut cloud.means[i][k],
        Param::LRaw(i, k) => &mut cloud.l_raw[i][k],
        Param::Intensity(i) => &mut cloud.intensity_raw[i],
        Param::Opacity(i) => &mut cloud.opacity_raw[i],
        Param::BgIntensity => &mut cloud.bg_intensity_raw,
        Param::BgOpacity => &mut cloud.bg_opacity_raw,
    }
}

fn analytic(g: &ParamGradients<f64>, p: Param) -> f64 {
    match p {
        Param::Mean(i, k) => g.d_means[i][k],
        Param::LRaw(i, k) => g.d_l_raw[i][k],
        Param::Intensity(i) => g.d_intensity_raw[i],
        Param::Opacity(i) => g.d_opacity_raw[i],
        Param::BgIntensity => g.d_bg_intensity_raw,
        Param::BgOpacity => g.d_bg_opacity_raw,
    }
}

fn central_difference(eval: &mut FdEvaluator<'_>, p: Param, h: f64) -> f64 {
    let pixels = match p {
        Param::Mean(i, _) | Param::LRaw(i, _) | Param::Intensity(i) | Param::Opacity(i) => {
            eval.per_gaussian[i].clone()
        }
        Param::BgIntensity | Param::BgOpacity => eval.all_pixels(),
    };
    let original = *param_mut(&mut eval.cloud, p);
    *param_mut(&mut eval.cloud, p) = original + h;
    let plus = eval.partial_loss(&pixels);
    *param_mut(&mut eval.cloud, p) = original - h;
    let minus = eval.partial_loss(&pixels);
    *param_mut(&mut eval.cloud, p) = original;
    (plus - minus) / (2.0 * h)
}

fn group_error(pairs: &[(f64, f64)]) -> GroupError {
    let mut out = GroupError::default();
    let (mut diff_sq, mut ref_sq) = (0.0, 0.0);
    for &(a, n) in pairs {
        diff_sq += (a - n).powi(2);
        ref_sq += n * n;
        let denom = a.abs() + n.abs();
        if denom > REL_DENOMINATOR_FLOOR {
            out.max_rel = out.max_rel.max((a - n).abs() / denom);
            out.compared += 1;
        }
    }
    out.norm_rel = if ref_sq > 0.0 {
        (diff_sq / ref_sq).sqrt()
    } else if diff_sq > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    out
}

/// Compares [`backward`] against central differences of `Σ pixel²` in
/// 64-bit arithmetic.
pub fn grad_check(cloud: &GaussianCloud<f64>, spec: &SliceSpec, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let render = RenderOptions::new(opts.p_mass, ExecMode::Sequential);
    let buffers = rasterize(cloud, spec, &render)?;
    let pixels = buffers.pixels();
    let d_pixels: Vec<f64> = pixels.iter().map(|p| 2.0 * p).collect();
    let grads = backward(cloud, spec, &buffers, &d_pixels, ExecMode::Sequential)?;

    let mut eval = FdEvaluator::new(cloud, spec, &buffers, opts.reference);
    let n = cloud.len();
    let mut groups: [Vec<Param>; 5] = [
        (0..n).flat_map(|i| (0..3).map(move |k| Param::Mean(i, k))).collect(),
        (0..n).flat_map(|i| (0..6).map(move |k| Param::LRaw(i, k))).collect(),
        (0..n).map(Param::Intensity).collect(),
        (0..n).map(Param::Opacity).collect(),
        vec![Param::BgIntensity, Param::BgOpacity],
    ];
    if let Some(limit) = opts.max_entries_per_group {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for g in groups.iter_mut() {
            g.shuffle(&mut rng);
            g.truncate(limit);
        }
    }
    let mut errors = [GroupError::default(); 5];
    for (slot, params) in groups.iter().enumerate() {
        let pairs: Vec<(f64, f64)> = params
            .iter()
            .map(|&p| (analytic(&grads, p), central_difference(&mut eval, p, opts.h)))
            .collect();
        errors[slot] = group_error(&pairs);
    }
    Ok(GradCheckReport {
        means: errors[0],
        l_raw: errors[1],
        intensity: errors[2],
        opacity: errors[3],
        background: errors[4],
    })
}

/// A random scene for gradient checks: `n` Gaussians of 1–3 px scale lying
/// near the probe plane of a `size × size` slice at a random pose.
pub fn random_check_scene(seed: u64, n: usize, size: usize) -> Result<(GaussianCloud<f64>, SliceSpec)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = ProbePose::from_euler_zyx_deg(
        rng.random_range(-180.0..180.0),
        rng.random_range(-80.0..80.0),
        rng.random_range(-180.0..180.0),
        [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)],
    );
    let spec = SliceSpec::new(size, size, 1.0, pose)?;
    let half = size as f64 / 2.0;
    let mut cloud = GaussianCloud::empty(crate::model::DEFAULT_BETA);
    cloud.bg_intensity_raw = rng.random_range(-2.0..2.0);
    cloud.bg_opacity_raw = rng.random_range(-3.0..-1.0);
    for _ in 0..n {
        let local = [
            rng.random_range(-half..half),
            rng.random_range(-half..half),
            rng.random_range(-1.5..1.5),
        ];
        let raw = [
            rng.random_range(0.6..1.1),
            rng.random_range(0.6..1.1),
            rng.random_range(0.6..1.1),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
        ];
        cloud.push(
            pose.transform_point(&local),
            raw,
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
    }
    Ok((cloud, spec))
}

//! Optimization of a Gaussian cloud against posed slices.
//!
//! Training runs in a normalized frame where the scene box maps to
//! `[-1, 1]` along its longest axis, so the initial Gaussian sizes and
//! learning rates are independent of the physical scale. The result is mapped
//! back to millimetres exactly before it is returned.

pub mod adam;
pub mod checkpoint;
pub mod heuristics;
pub mod loss;

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{exp_decay, AdamState, LearningRates};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, ViewDefaults};
pub use heuristics::{densify_prune_resample, GradStats, HeuristicOutcome, HeuristicParams};
pub use loss::{loss, loss_pixels, LossKind, LossOutput};

use crate::data::{SliceDataset, SliceImage};
use crate::error::{Error, Result};
use crate::gradients::{backward, ParamGradients};
use crate::linalg::Vec3;
use crate::model::{GaussianCloud, DEFAULT_BETA};
use crate::pose::ProbePose;
use crate::rasterizer::{rasterize, ExecMode, RenderOptions, SliceSpec, DEFAULT_P_MASS};

/// Axis-aligned world box, `(min, max)` in mm.
pub type Bounds = (Vec3<f64>, Vec3<f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_gaussians: usize,
    pub iterations: usize,
    pub lr_general: f64,
    pub lr_means_start: f64,
    pub lr_means_final: f64,
    pub ssim_loss_weight: f64,
    pub loss: LossKind,
    pub heuristic_interval: usize,
    /// Fixed threshold on the mean world-space gradient norm; `None` takes
    /// the 90th percentile of the first heuristic window.
    pub densify_grad_threshold: Option<f64>,
    /// Densification stops after this fraction of the iterations.
    pub densify_until: f64,
    /// Largest standard deviation, in normalized units, above which a
    /// densified Gaussian is split rather than cloned.
    pub split_scale: f64,
    pub prune_alpha_threshold: f64,
    /// Largest standard deviation, in normalized units, a Gaussian may keep
    /// before it is pruned.
    pub prune_scale: f64,
    pub p_mass: f64,
    pub seed: u64,
    pub batch: usize,
    pub beta: f64,
    pub exec_mode: ExecMode,
    pub log_interval: usize,
    /// Wall-clock limit; training stops early once exceeded.
    pub time_budget_s: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_gaussians: 20_000,
            iterations: 3000,
            lr_general: 0.05,
            lr_means_start: 1.6e-4,
            lr_means_final: 1.6e-6,
            ssim_loss_weight: 0.2,
            loss: LossKind::L1Ssim,
            heuristic_interval: 100,
            densify_grad_threshold: None,
            densify_until: 0.5,
            split_scale: 0.05,
            prune_alpha_threshold: 0.01,
            prune_scale: 0.5,
            p_mass: DEFAULT_P_MASS,
            seed: 0,
            batch: 1,
            beta: DEFAULT_BETA,
            exec_mode: ExecMode::Deterministic,
            log_interval: 100,
            time_budget_s: None,
        }
    }
}

impl TrainConfig {
    /// Named model sizes: `desk` (20K), `100k`, `200k`, `300k`, `2m`.
    pub fn preset(name: &str) -> Result<Self> {
        let n = match name.to_ascii_lowercase().as_str() {
            "desk" => 20_000,
            "100k" => 100_000,
            "200k" => 200_000,
            "300k" => 300_000,
            "2m" => 2_000_000,
            other => return Err(Error::invalid(format!("unknown preset '{other}' (desk, 100k, 200k, 300k, 2m)"))),
        };
        Ok(Self {
            n_gaussians: n,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_general", self.lr_general),
            ("lr_means_start", self.lr_means_start),
            ("lr_means_final", self.lr_means_final),
            ("split_scale", self.split_scale),
            ("prune_scale", self.prune_scale),
            ("beta", self.beta),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_gaussians == 0 {
            return Err(Error::invalid("n_gaussians must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.ssim_loss_weight) {
            return Err(Error::invalid(format!("ssim_loss_weight must lie in [0, 1], got {}", self.ssim_loss_weight)));
        }
        if !(0.0..=1.0).contains(&self.densify_until) {
            return Err(Error::invalid("densify_until must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.prune_alpha_threshold) {
            return Err(Error::invalid("prune_alpha_threshold must lie in [0, 1)"));
        }
        if !(self.p_mass > 0.0 && self.p_mass < 1.0) {
            return Err(Error::invalid(format!("p_mass must lie in (0, 1), got {}", self.p_mass)));
        }
        if self.batch == 0 || self.heuristic_interval == 0 || self.log_interval == 0 {
            return Err(Error::invalid("batch, heuristic_interval and log_interval must be positive"));
        }
        if let Some(t) = self.densify_grad_threshold {
            if !(t >= 0.0) {
                return Err(Error::invalid("densify_grad_threshold must be non-negative"));
            }
        }
        Ok(())
    }

    fn render_options(&self) -> RenderOptions {
        RenderOptions::new(self.p_mass, self.exec_mode)
    }
}

/// Similarity mapping the scene box into the normalized training frame,
/// `x_norm = (x − center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneFrame {
    pub center: Vec3<f64>,
    pub scale: f64,
}

impl SceneFrame {
    pub fn from_bounds(bounds: &Bounds) -> Result<Self> {
        check_bounds(bounds)?;
        let (lo, hi) = bounds;
        let half = [0, 1, 2].map(|k| (hi[k] - lo[k]) / 2.0);
        Ok(Self {
            center: [0, 1, 2].map(|k| (hi[k] + lo[k]) / 2.0),
            scale: half.iter().cloned().fold(0.0, f64::max),
        })
    }

    pub fn to_normalized_point(&self, p: &Vec3<f64>) -> Vec3<f64> {
        [0, 1, 2].map(|k| (p[k] - self.center[k]) / self.scale)
    }

    pub fn to_normalized_bounds(&self, b: &Bounds) -> Bounds {
        (self.to_normalized_point(&b.0), self.to_normalized_point(&b.1))
    }

    pub fn to_normalized_slice(&self, s: &SliceImage) -> SliceImage {
        let t = self.to_normalized_point(s.pose.translation());
        let pose = ProbePose::new(*s.pose.rotation(), t).expect("rotation already validated");
        SliceImage {
            width: s.width,
            height: s.height,
            spacing: s.spacing / self.scale,
            pose,
            pixels: s.pixels.clone(),
        }
    }

    /// Maps a normalized-frame cloud back to world millimetres.
    pub fn to_world_cloud(&self, cloud: &GaussianCloud<f32>) -> GaussianCloud<f32> {
        let mut out = cloud.cast::<f64>().scaled(self.scale);
        for m in out.means.iter_mut() {
            for k in 0..3 {
                m[k] += self.center[k];
            }
        }
        out.cast()
    }

    /// Maps a world cloud into the normalized frame.
    pub fn to_normalized_cloud(&self, cloud: &GaussianCloud<f32>) -> GaussianCloud<f32> {
        let mut c = cloud.cast::<f64>();
        for m in c.means.iter_mut() {
            for k in 0..3 {
                m[k] -= self.center[k];
            }
        }
        c.scaled(1.0 / self.scale).cast()
    }
}

fn check_bounds(bounds: &Bounds) -> Result<()> {
    let (lo, hi) = bounds;
    for k in 0..3 {
        if !(lo[k].is_finite() && hi[k].is_finite() && hi[k] > lo[k]) {
            return Err(Error::invalid(format!("degenerate bounds on axis {k}: [{}, {}]", lo[k], hi[k])));
        }
    }
    Ok(())
}

/// Box covering every pixel centre of `slices`; thin axes are padded to two
/// pixel spacings.
pub fn bounds_of_slices(slices: &[SliceImage]) -> Result<Bounds> {
    if slices.is_empty() {
        return Err(Error::invalid("no slices"));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut pad: f64 = 0.0;
    for s in slices {
        for (u, v) in [(0, 0), (s.width - 1, 0), (0, s.height - 1), (s.width - 1, s.height - 1)] {
            let p = s.spec().pixel_to_world(u, v);
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        pad = pad.max(s.spacing);
    }
    for k in 0..3 {
        if hi[k] - lo[k] < 2.0 * pad {
            let c = (hi[k] + lo[k]) / 2.0;
            lo[k] = c - pad;
            hi[k] = c + pad;
        }
    }
    Ok((lo, hi))
}

/// Initial cloud: means uniform in `bounds`, `c = 0.5`, `α = σ(1) ≈ 0.731`,
/// all six raw factor entries uniform in `[4, 5)`.
pub fn init_cloud(config: &TrainConfig, bounds: &Bounds, rng: &mut impl Rng) -> Result<GaussianCloud<f32>> {
    check_bounds(bounds)?;
    if config.n_gaussians == 0 {
        return Err(Error::invalid("n_gaussians must be at least 1"));
    }
    let (lo, hi) = bounds;
    let mut cloud = GaussianCloud::empty(config.beta as f32);
    cloud.bg_opacity_raw = -4.0;
    cloud.bg_intensity_raw = 0.0;
    for _ in 0..config.n_gaussians {
        let mean = [0, 1, 2].map(|k| rng.random_range(lo[k]..hi[k]) as f32);
        let raw = [0; 6].map(|_| uniform_raw(rng));
        cloud.push(mean, raw, 0.0, 1.0);
    }
    Ok(cloud)
}

/// Uniform on the `f32` grid of `[4, 5)`; `4 + u` would round up to 5.
fn uniform_raw(rng: &mut impl Rng) -> f32 {
    const STEPS: u32 = 1 << 21;
    4.0 + rng.random_range(0..STEPS) as f32 / STEPS as f32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iter: usize,
    pub wall_ms: u64,
    /// Mean loss over the logging interval.
    pub loss: f64,
    /// Mean SSIM of the rendered training slices over the logging interval.
    pub train_ssim: f64,
    pub n_gaussians: usize,
}

#[derive(Debug, Clone, Default)]
pub struct TrainContext {
    /// Scene box; defaults to the extent of the training slices.
    pub bounds: Option<Bounds>,
    /// Where to dump the cloud if the loss turns non-finite.
    pub snapshot_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Trained cloud in world millimetres.
    pub cloud: GaussianCloud<f32>,
    pub iterations: usize,
    pub log: Vec<LogEntry>,
    pub frame: SceneFrame,
    pub bounds: Bounds,
    pub wall_ms: u64,
}

impl TrainOutcome {
    pub fn checkpoint(&self, config: &TrainConfig, default_view: ViewDefaults) -> Checkpoint {
        Checkpoint {
            cloud: self.cloud.clone(),
            meta: CheckpointMeta {
                config: config.clone(),
                iteration: self.iterations,
                world_bounds_mm: [self.bounds.0, self.bounds.1],
                default_view,
            },
        }
    }
}

/// Runs the optimization on the training split of `dataset`.
pub fn train(
    dataset: &SliceDataset,
    config: &TrainConfig,
    ctx: &TrainContext,
    mut on_log: impl FnMut(&LogEntry),
) -> Result<TrainOutcome> {
    config.validate()?;
    let world_slices = dataset.train();
    if world_slices.is_empty() {
        return Err(Error::invalid("dataset has no training slices"));
    }
    for s in &world_slices {
        if s.width < crate::metrics::SSIM_WINDOW || s.height < crate::metrics::SSIM_WINDOW {
            return Err(Error::invalid(format!("training slices must be at least 11×11, got {}×{}", s.width, s.height)));
        }
    }
    let bounds = match ctx.bounds {
        Some(b) => b,
        None => bounds_of_slices(&world_slices)?,
    };
    let frame = SceneFrame::from_bounds(&bounds)?;
    let slices: Vec<SliceImage> = world_slices.iter().map(|s| frame.to_normalized_slice(s)).collect();
    let specs: Vec<SliceSpec> = slices.iter().map(|s| s.spec()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut cloud = init_cloud(config, &frame.to_normalized_bounds(&bounds), &mut rng)?;
    let mut adam = AdamState::new(cloud.len());
    let mut stats = GradStats::new(cloud.len());
    let mut threshold = config.densify_grad_threshold;
    let render = config.render_options();
    let max_gaussians = 2 * config.n_gaussians;
    let densify_stop = (config.iterations as f64 * config.densify_until) as usize;

    let start = Instant::now();
    let mut order: Vec<usize> = Vec::new();
    let mut log = Vec::new();
    let (mut loss_acc, mut ssim_acc, mut acc_n) = (0.0, 0.0, 0usize);
    let mut iter = 0;
    while iter < config.iterations {
        if let Some(budget) = config.time_budget_s {
            if start.elapsed().as_secs_f64() > budget {
                break;
            }
        }
        iter += 1;
        let mut grads = ParamGradients::<f32>::zeros(cloud.len());
        for _ in 0..config.batch {
            if order.is_empty() {
                order = (0..slices.len()).collect();
                order.shuffle(&mut rng);
            }
            let idx = order.pop().unwrap();
            let buffers = rasterize(&cloud, &specs[idx], &render)?;
            let pred = buffers.pixels();
            let out = loss_pixels(&pred, &slices[idx].pixels, specs[idx].width, specs[idx].height, config.ssim_loss_weight, config.loss)?;
            if !out.loss.is_finite() {
                return Err(non_finite(&frame, &cloud, iter, config, &bounds, ctx));
            }
            let g = backward(&cloud, &specs[idx], &buffers, &out.d_pixels, config.exec_mode)?;
            stats.record(&g, &buffers.accepted);
            grads.accumulate(&g);
            loss_acc += out.loss;
            ssim_acc += out.ssim;
            acc_n += 1;
        }
        if config.batch > 1 {
            let s = 1.0 / config.batch as f32;
            scale_grads(&mut grads, s);
        }
        if !grads.is_finite() {
            return Err(non_finite(&frame, &cloud, iter, config, &bounds, ctx));
        }

        let lr_means = exp_decay(config.lr_means_start, config.lr_means_final, iter - 1, config.iterations) as f32;
        let lrs = LearningRates {
            means: lr_means,
            ..LearningRates::uniform(config.lr_general as f32)
        };
        adam.step(&mut cloud, &grads, &lrs)?;

        if iter % config.heuristic_interval == 0 && iter < config.iterations {
            let densify = iter <= densify_stop;
            if densify && threshold.is_none() {
                threshold = stats.quantile(0.9);
            }
            let params = HeuristicParams {
                prune_alpha_threshold: config.prune_alpha_threshold as f32,
                prune_scale: config.prune_scale,
                densify_grad_threshold: threshold.unwrap_or(f64::INFINITY),
                split_scale: config.split_scale,
                max_gaussians,
                densify,
            };
            densify_prune_resample(&mut cloud, &stats, &mut adam, &params, &mut rng);
            stats = GradStats::new(cloud.len());
        }

        if iter % config.log_interval == 0 || iter == config.iterations {
            let entry = LogEntry {
                iter,
                wall_ms: start.elapsed().as_millis() as u64,
                loss: loss_acc / acc_n.max(1) as f64,
                train_ssim: ssim_acc / acc_n.max(1) as f64,
                n_gaussians: cloud.len(),
            };
            on_log(&entry);
            log.push(entry);
            (loss_acc, ssim_acc, acc_n) = (0.0, 0.0, 0);
        }
    }

    Ok(TrainOutcome {
        cloud: frame.to_world_cloud(&cloud),
        iterations: iter,
        log,
        frame,
        bounds,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

fn scale_grads(g: &mut ParamGradients<f32>, s: f32) {
    g.d_means.iter_mut().flatten().for_each(|v| *v *= s);
    g.d_l_raw.iter_mut().flatten().for_each(|v| *v *= s);
    g.d_intensity_raw.iter_mut().for_each(|v| *v *= s);
    g.d_opacity_raw.iter_mut().for_each(|v| *v *= s);
    g.d_bg_intensity_raw *= s;
    g.d_bg_opacity_raw *= s;
}

fn non_finite(
    frame: &SceneFrame,
    cloud: &GaussianCloud<f32>,
    iteration: usize,
    config: &TrainConfig,
    bounds: &Bounds,
    ctx: &TrainContext,
) -> Error {
    let snapshot = ctx.snapshot_path.as_ref().and_then(|path| {
        let ckpt = Checkpoint {
            cloud: frame.to_world_cloud(cloud),
            meta: CheckpointMeta {
                config: config.clone(),
                iteration,
                world_bounds_mm: [bounds.0, bounds.1],
                default_view: ViewDefaults { width: 0, height: 0, spacing: 1.0 },
            },
        };
        // the snapshot is best effort; non-finite parameters fail validation
        let bytes = serde_json::to_vec(&ckpt.cloud).ok()?;
        std::fs::write(path, bytes).ok()?;
        Some(path.clone())
    });
    Error::NonFiniteLoss { iteration, snapshot }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_axial_stack, make_phantom, PhantomKind};
    use crate::metrics::ssim;
    use crate::rasterizer::render_slice;

    #[test]
    fn init_matches_stated_values() {
        let cfg = TrainConfig {
            n_gaussians: 100_000,
            ..TrainConfig::default()
        };
        let bounds = ([-1.0, -2.0, -3.0], [1.0, 2.0, 3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cloud = init_cloud(&cfg, &bounds, &mut rng).unwrap();
        assert_eq!(cloud.len(), 100_000);
        assert!((cloud.alpha(0) - 0.731).abs() < 5e-4);
        assert_eq!(cloud.intensity(0), 0.5);
        let n = cloud.len() as f64;
        for k in 0..3 {
            let (lo, hi) = (bounds.0[k], bounds.1[k]);
            assert!(cloud.means.iter().all(|m| (m[k] as f64) >= lo && (m[k] as f64) < hi));
            let mean = cloud.means.iter().map(|m| m[k] as f64).sum::<f64>() / n;
            let sd = (hi - lo) / 12f64.sqrt() / n.sqrt();
            assert!(mean.abs() < 3.0 * sd);
        }
        let mut hist = [0usize; 10];
        for r in cloud.l_raw.iter().flatten() {
            assert!((4.0..5.0).contains(r), "{r}");
            hist[((r - 4.0) * 10.0) as usize] += 1;
        }
        let expected = 6.0 * n / 10.0;
        assert!(hist.iter().all(|&h| (h as f64 - expected).abs() < 0.05 * expected));
        for i in 0..1000 {
            let l = cloud.cast::<f64>().l_factor(i);
            let cov = l.covariance();
            // the last axis is untouched by the off-diagonal entries
            let inv_l33 = 1.0 / l.matrix()[2][2].powi(2);
            assert!((cov[2][2] - inv_l33).abs() < 1e-12);
            // 1/(25 + β)² = 0.001599 rounds to the quoted 0.0016
            assert!((0.00159..=0.0040).contains(&inv_l33), "{inv_l33}");
            for j in 0..3 {
                assert!((0.00159..=0.0045).contains(&cov[j][j]), "{cov:?}");
            }
        }
    }

    #[test]
    fn degenerate_bounds_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = ([0.0, 0.0, 1.0], [1.0, 1.0, 1.0]);
        assert!(init_cloud(&TrainConfig::default(), &b, &mut rng).is_err());
    }

    #[test]
    fn presets_and_validation() {
        assert_eq!(TrainConfig::preset("300K").unwrap().n_gaussians, 300_000);
        assert_eq!(TrainConfig::preset("2m").unwrap().n_gaussians, 2_000_000);
        assert!(TrainConfig::preset("5k").is_err());
        let bad = TrainConfig {
            ssim_loss_weight: 1.5,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig { n_gaussians: 0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn frame_round_trip_renders_identically() {
        let frame = SceneFrame { center: [1.0, -2.0, 0.5], scale: 20.0 };
        let mut cloud = GaussianCloud::<f32>::empty(0.01);
        cloud.push([0.1, 0.2, -0.1], [4.5, 4.2, 4.8, 0.3, -0.2, 0.1], 0.5, 1.0);
        cloud.push([-0.3, 0.0, 0.05], [4.0, 4.9, 4.1, -0.4, 0.2, 0.0], -0.5, 0.5);
        let world = frame.to_world_cloud(&cloud);
        let pose = ProbePose::from_euler_zyx_deg(3.0, -2.0, 10.0, [1.0, -2.0, 0.5]);
        let slice = SliceImage::constant(24, 24, 0.5, pose, 0.0);
        let a = render_slice(&world, &slice.spec(), &RenderOptions::default()).unwrap();
        let b = render_slice(&cloud, &frame.to_normalized_slice(&slice).spec(), &RenderOptions::default()).unwrap();
        for (x, y) in a.pixels.iter().zip(&b.pixels) {
            assert!((x - y).abs() < 1e-4);
        }
        let back = frame.to_normalized_cloud(&world);
        for (p, q) in back.means.iter().flatten().zip(cloud.means.iter().flatten()) {
            assert!((p - q).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_slice_fits() {
        let pose = ProbePose::identity();
        let slice = SliceImage::constant(16, 16, 1.0, pose, 0.3);
        let ds = SliceDataset::new(vec![slice.clone()]);
        let cfg = TrainConfig {
            n_gaussians: 100,
            iterations: 200,
            exec_mode: ExecMode::Sequential,
            ..TrainConfig::default()
        };
        let out = train(&ds, &cfg, &TrainContext::default(), |_| {}).unwrap();
        let img = render_slice(&out.cloud, &slice.spec(), &RenderOptions::new(cfg.p_mass, ExecMode::Sequential)).unwrap();
        let s = ssim(&img, &slice).unwrap();
        assert!(s >= 0.99, "ssim {s}");
        assert_eq!(out.log.last().unwrap().iter, 200);
    }

    #[test]
    fn sequential_training_is_reproducible() {
        let vol = make_phantom(PhantomKind::Blobs, [16, 16, 16], 1.0, 3).unwrap();
        let ds = make_axial_stack(&vol, 8, 0.0, 0).unwrap();
        let cfg = TrainConfig {
            n_gaussians: 300,
            iterations: 120,
            heuristic_interval: 50,
            exec_mode: ExecMode::Sequential,
            ..TrainConfig::default()
        };
        let ctx = TrainContext {
            bounds: Some(vol.world_bounds()),
            ..Default::default()
        };
        let a = train(&ds, &cfg, &ctx, |_| {}).unwrap();
        let b = train(&ds, &cfg, &ctx, |_| {}).unwrap();
        assert_eq!(a.cloud, b.cloud);
        assert!(a.cloud.validate().is_ok());
        let first = a.log.first().unwrap().loss;
        let last = a.log.last().unwrap().loss;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn tiny_slices_rejected() {
        let ds = SliceDataset::new(vec![SliceImage::constant(8, 8, 1.0, ProbePose::identity(), 0.2)]);
        assert!(train(&ds, &TrainConfig::default(), &TrainContext::default(), |_| {}).is_err());
    }
}

//! Pruning, densification and resampling of Gaussians between optimizer steps.

use rand::Rng;
use rand_distr::StandardNormal;

use super::adam::AdamState;
use crate::gradients::ParamGradients;
use crate::linalg;
use crate::model::{sample_gaussian, GaussianCloud};

/// Per-axis standard-deviation shrink applied to split children.
pub const SPLIT_SHRINK: f32 = 1.6;

/// Running mean-gradient norms between heuristic applications.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradStats {
    pub norm_sum: Vec<f64>,
    pub visible: Vec<u32>,
}

impl GradStats {
    pub fn new(n: usize) -> Self {
        Self {
            norm_sum: vec![0.0; n],
            visible: vec![0; n],
        }
    }

    /// Records the mean-gradient norms of the Gaussians rendered in one slice.
    pub fn record(&mut self, grads: &ParamGradients<f32>, accepted: &[usize]) {
        for &i in accepted {
            let g = grads.d_means[i].map(|v| v as f64);
            self.norm_sum[i] += linalg::norm(&g);
            self.visible[i] += 1;
        }
    }

    /// Average norm per Gaussian, `None` if never visible.
    pub fn mean_norms(&self) -> Vec<Option<f64>> {
        self.norm_sum
            .iter()
            .zip(&self.visible)
            .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
            .collect()
    }

    /// `q`-quantile of the mean norms of visible Gaussians.
    pub fn quantile(&self, q: f64) -> Option<f64> {
        let mut v: Vec<f64> = self.mean_norms().into_iter().flatten().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(|a, b| a.total_cmp(b));
        let idx = ((v.len() - 1) as f64 * q).round() as usize;
        Some(v[idx])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicParams {
    pub prune_alpha_threshold: f32,
    /// Gaussians whose largest standard deviation exceeds this are pruned.
    pub prune_scale: f64,
    pub densify_grad_threshold: f64,
    /// Gaussians whose largest standard deviation exceeds this are split;
    /// smaller ones are cloned.
    pub split_scale: f64,
    pub max_gaussians: usize,
    pub densify: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HeuristicOutcome {
    pub pruned: usize,
    pub split: usize,
    pub cloned: usize,
}

/// Largest standard deviation of Gaussian `i`.
pub fn max_sigma(cloud: &GaussianCloud<f32>, i: usize) -> f64 {
    let l = cloud.cast::<f64>().l_factor(i);
    linalg::max_eigenvalue_sym(&l.covariance()).sqrt()
}

fn max_sigma_of(raw: &[f32; 6], beta: f32) -> f64 {
    let l = crate::model::TriangularPrecision::build_unchecked(&raw.map(|v| v as f64), beta as f64);
    linalg::max_eigenvalue_sym(&l.covariance()).sqrt()
}

/// Raw factor of a Gaussian whose standard deviations are divided by `shrink`.
pub fn shrink_raw(raw: &[f32; 6], beta: f32, shrink: f32) -> [f32; 6] {
    let diag = |r: f32| {
        let v = (shrink * (r * r + beta) - beta).max(0.0).sqrt();
        if r < 0.0 {
            -v
        } else {
            v
        }
    };
    [diag(raw[0]), diag(raw[1]), diag(raw[2]), raw[3] * shrink, raw[4] * shrink, raw[5] * shrink]
}

fn sample_near(cloud: &GaussianCloud<f32>, i: usize, rng: &mut impl Rng) -> [f32; 3] {
    let z: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
    let c = |v: f32| v as f64;
    let mean = cloud.means[i].map(c);
    let l = crate::model::TriangularPrecision::build_unchecked(&cloud.l_raw[i].map(c), c(cloud.beta));
    sample_gaussian(&mean, &l, &z).map(|v| v as f32)
}

/// Prunes transparent and oversized Gaussians, then splits or clones those with large
/// accumulated mean gradients. New Gaussians get zero optimizer moments and
/// the total never exceeds `params.max_gaussians` through densification.
pub fn densify_prune_resample(
    cloud: &mut GaussianCloud<f32>,
    stats: &GradStats,
    adam: &mut AdamState,
    params: &HeuristicParams,
    rng: &mut impl Rng,
) -> HeuristicOutcome {
    let n = cloud.len();
    let mut keep: Vec<bool> = (0..n)
        .map(|i| cloud.alpha(i) >= params.prune_alpha_threshold && max_sigma_of(&cloud.l_raw[i], cloud.beta) <= params.prune_scale)
        .collect();
    let mut outcome = HeuristicOutcome {
        pruned: keep.iter().filter(|k| !**k).count(),
        ..Default::default()
    };

    let mut candidates: Vec<(usize, f64)> = Vec::new();
    if params.densify {
        for (i, norm) in stats.mean_norms().into_iter().enumerate() {
            match norm {
                Some(g) if keep[i] && g > params.densify_grad_threshold => candidates.push((i, g)),
                _ => {}
            }
        }
    }
    // strongest gradients first when the budget binds; index breaks ties
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let budget = params.max_gaussians.saturating_sub(n - outcome.pruned);
    candidates.truncate(budget);
    candidates.sort_by_key(|c| c.0);

    let mut added = GaussianCloud::<f32>::empty(cloud.beta);
    for &(i, _) in &candidates {
        let (c, a) = (cloud.intensity_raw[i], cloud.opacity_raw[i]);
        if max_sigma_of(&cloud.l_raw[i], cloud.beta) > params.split_scale {
            let raw = shrink_raw(&cloud.l_raw[i], cloud.beta, SPLIT_SHRINK);
            for _ in 0..2 {
                let m = sample_near(cloud, i, rng);
                added.push(m, raw, c, a);
            }
            keep[i] = false;
            outcome.split += 1;
        } else {
            let m = sample_near(cloud, i, rng);
            added.push(m, cloud.l_raw[i], c, a);
            outcome.cloned += 1;
        }
    }

    cloud.retain_mask(&keep);
    adam.retain_mask(&keep);
    let k = added.len();
    cloud.means.extend(added.means);
    cloud.l_raw.extend(added.l_raw);
    cloud.intensity_raw.extend(added.intensity_raw);
    cloud.opacity_raw.extend(added.opacity_raw);
    adam.extend_zeros(k);
    outcome
}

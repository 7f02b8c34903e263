//! Adam with per-group learning rates.

use crate::error::{Error, Result};
use crate::gradients::ParamGradients;
use crate::model::GaussianCloud;

pub const ADAM_BETA1: f32 = 0.9;
pub const ADAM_BETA2: f32 = 0.999;
pub const ADAM_EPS: f32 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub means: f32,
    pub l_raw: f32,
    pub intensity: f32,
    pub opacity: f32,
    pub background: f32,
}

impl LearningRates {
    pub fn uniform(lr: f32) -> Self {
        Self {
            means: lr,
            l_raw: lr,
            intensity: lr,
            opacity: lr,
            background: lr,
        }
    }
}

/// `lr(t) = start·(end/start)^(t/total)`, clamped to `t ≤ total`.
pub fn exp_decay(start: f64, end: f64, t: usize, total: usize) -> f64 {
    if total == 0 {
        return end;
    }
    let f = (t.min(total) as f64) / total as f64;
    start * (end / start).powf(f)
}

/// First and second moments, shaped like the cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamGradients<f32>,
    pub v: ParamGradients<f32>,
    pub step: u64,
}

#[inline]
fn update(p: &mut f32, g: f32, m: &mut f32, v: &mut f32, lr: f32, bc1: f32, bc2: f32) {
    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
    let m_hat = *m / bc1;
    let v_hat = *v / bc2;
    *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: ParamGradients::zeros(n),
            v: ParamGradients::zeros(n),
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn retain_mask(&mut self, keep: &[bool]) {
        self.m.retain_mask(keep);
        self.v.retain_mask(keep);
    }

    /// Zero moments for `n` newly appended Gaussians.
    pub fn extend_zeros(&mut self, n: usize) {
        self.m.extend_zeros(n);
        self.v.extend_zeros(n);
    }

    /// One bias-corrected Adam update of every parameter.
    pub fn step(&mut self, cloud: &mut GaussianCloud<f32>, grads: &ParamGradients<f32>, lr: &LearningRates) -> Result<()> {
        let n = cloud.len();
        if grads.len() != n || self.len() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("{n} Gaussians"),
                actual: format!("gradients {}, optimizer state {}", grads.len(), self.len()),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let (m, v) = (&mut self.m, &mut self.v);
        for i in 0..n {
            for k in 0..3 {
                update(&mut cloud.means[i][k], grads.d_means[i][k], &mut m.d_means[i][k], &mut v.d_means[i][k], lr.means, bc1, bc2);
            }
            for k in 0..6 {
                update(&mut cloud.l_raw[i][k], grads.d_l_raw[i][k], &mut m.d_l_raw[i][k], &mut v.d_l_raw[i][k], lr.l_raw, bc1, bc2);
            }
            update(
                &mut cloud.intensity_raw[i],
                grads.d_intensity_raw[i],
                &mut m.d_intensity_raw[i],
                &mut v.d_intensity_raw[i],
                lr.intensity,
                bc1,
                bc2,
            );
            update(
                &mut cloud.opacity_raw[i],
                grads.d_opacity_raw[i],
                &mut m.d_opacity_raw[i],
                &mut v.d_opacity_raw[i],
                lr.opacity,
                bc1,
                bc2,
            );
        }
        update(
            &mut cloud.bg_intensity_raw,
            grads.d_bg_intensity_raw,
            &mut m.d_bg_intensity_raw,
            &mut v.d_bg_intensity_raw,
            lr.background,
            bc1,
            bc2,
        );
        update(
            &mut cloud.bg_opacity_raw,
            grads.d_bg_opacity_raw,
            &mut m.d_bg_opacity_raw,
            &mut v.d_bg_opacity_raw,
            lr.background,
            bc1,
            bc2,
        );
        Ok(())
    }
}

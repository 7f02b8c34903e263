//! Photometric training loss.

use serde::{Deserialize, Serialize};

use crate::data::SliceImage;
use crate::error::{Error, Result};
use crate::metrics::{ssim_pixels, ssim_with_grad};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `(1−λ)·L1 + λ·(1 − SSIM)`.
    #[default]
    L1Ssim,
    /// Mean squared error.
    L2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// SSIM of the prediction against the target.
    pub ssim: f64,
    /// Gradient of `loss` with respect to each predicted pixel.
    pub d_pixels: Vec<f32>,
}

pub fn loss_pixels(pred: &[f32], target: &[f32], width: usize, height: usize, lambda: f64, kind: LossKind) -> Result<LossOutput> {
    if pred.len() != target.len() || pred.len() != width * height {
        return Err(Error::DimensionMismatch {
            expected: format!("{} pixels", width * height),
            actual: format!("{} and {}", pred.len(), target.len()),
        });
    }
    let n = pred.len() as f64;
    match kind {
        LossKind::L1Ssim => {
            let (s, ds) = ssim_with_grad(pred, target, width, height)?;
            let mut l1 = 0.0;
            let d_pixels = pred
                .iter()
                .zip(target)
                .zip(&ds)
                .map(|((&p, &t), &g)| {
                    let d = p as f64 - t as f64;
                    l1 += d.abs();
                    let sign = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    ((1.0 - lambda) * sign / n - lambda * g) as f32
                })
                .collect();
            Ok(LossOutput {
                loss: (1.0 - lambda) * l1 / n + lambda * (1.0 - s),
                ssim: s,
                d_pixels,
            })
        }
        LossKind::L2 => {
            let mut sq = 0.0;
            let d_pixels = pred
                .iter()
                .zip(target)
                .map(|(&p, &t)| {
                    let d = p as f64 - t as f64;
                    sq += d * d;
                    (2.0 * d / n) as f32
                })
                .collect();
            Ok(LossOutput {
                loss: sq / n,
                ssim: ssim_pixels(pred, target, width, height)?,
                d_pixels,
            })
        }
    }
}

pub fn loss(pred: &SliceImage, target: &SliceImage, lambda: f64, kind: LossKind) -> Result<LossOutput> {
    if (pred.width, pred.height) != (target.width, target.height) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}×{}", target.width, target.height),
            actual: format!("{}×{}", pred.width, pred.height),
        });
    }
    loss_pixels(&pred.pixels, &target.pixels, pred.width, pred.height, lambda, kind)
}

//! Gaussian scene representation.
//!
//! Each Gaussian's precision (inverse covariance) is `A = L·Lᵀ` with `L`
//! lower-triangular, built from six unconstrained raw values:
//!
//! ```text
//!     | r₁² + β     0        0     |
//! L = |   r₄      r₂² + β    0     |
//!     |   r₅        r₆     r₃² + β |
//! ```
//!
//! The diagonal is at least `β > 0`, so `L` is nonsingular and `A` is
//! positive-definite for any raw input. Inverting `L` is a forward
//! substitution, which gives the covariance `Σ = L⁻ᵀ·L⁻¹` and a sampler
//! `μ + L⁻ᵀ·z` without any general matrix factorization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat3, Vec3};
use crate::pose::ProbePose;
use crate::real::Real;

pub const DEFAULT_BETA: f64 = 0.01;

/// Raw slot → (row, col) in `L`.
pub const RAW_LAYOUT: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 0), (2, 0), (2, 1)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangularPrecision<T> {
    entries: Mat3<T>,
}

impl<T: Real> TriangularPrecision<T> {
    /// Builds `L` from raw values. `beta` must be strictly positive.
    pub fn build(l_raw: &[T; 6], beta: T) -> Result<Self> {
        if !(beta > T::ZERO) || !beta.is_finite() {
            return Err(Error::invalid(format!("beta must be > 0, got {beta}")));
        }
        Ok(Self::build_unchecked(l_raw, beta))
    }

    #[inline]
    pub(crate) fn build_unchecked(l_raw: &[T; 6], beta: T) -> Self {
        let mut entries = [[T::ZERO; 3]; 3];
        for j in 0..3 {
            entries[j][j] = l_raw[j] * l_raw[j] + beta;
        }
        entries[1][0] = l_raw[3];
        entries[2][0] = l_raw[4];
        entries[2][1] = l_raw[5];
        Self { entries }
    }

    /// Wraps an existing lower-triangular matrix. The upper triangle must be
    /// zero and the diagonal positive.
    pub fn from_matrix(entries: Mat3<T>) -> Result<Self> {
        if entries[0][1] != T::ZERO || entries[0][2] != T::ZERO || entries[1][2] != T::ZERO {
            return Err(Error::invalid("matrix is not lower-triangular"));
        }
        for j in 0..3 {
            if !(entries[j][j] > T::ZERO) {
                return Err(Error::SingularMatrix {
                    index: j,
                    value: entries[j][j].to_f64(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn matrix(&self) -> &Mat3<T> {
        &self.entries
    }

    /// `A = L·Lᵀ`
    pub fn precision(&self) -> Mat3<T> {
        linalg::gram(&self.entries)
    }

    pub fn det(&self) -> T {
        self.entries[0][0] * self.entries[1][1] * self.entries[2][2]
    }

    /// `L⁻¹`; never fails for factors built by [`build`](Self::build).
    pub fn inverse(&self) -> Mat3<T> {
        invert_lower_triangular_unchecked(&self.entries)
    }

    /// `Σ = L⁻ᵀ·L⁻¹`
    pub fn covariance(&self) -> Mat3<T> {
        let inv = self.inverse();
        linalg::mat_mul(&linalg::transpose(&inv), &inv)
    }

    /// Solves `Lᵀ·y = z` by back substitution.
    pub fn solve_transpose(&self, z: &Vec3<T>) -> Vec3<T> {
        let l = &self.entries;
        let y2 = z[2] / l[2][2];
        let y1 = (z[1] - l[2][1] * y2) / l[1][1];
        let y0 = (z[0] - l[1][0] * y1 - l[2][0] * y2) / l[0][0];
        [y0, y1, y2]
    }
}

/// Forward substitution on a lower-triangular 3×3 matrix, column by column.
pub fn invert_lower_triangular<T: Real>(l: &Mat3<T>) -> Result<Mat3<T>> {
    for j in 0..3 {
        if !(l[j][j] > T::ZERO) {
            return Err(Error::SingularMatrix {
                index: j,
                value: l[j][j].to_f64(),
            });
        }
    }
    Ok(invert_lower_triangular_unchecked(l))
}

fn invert_lower_triangular_unchecked<T: Real>(l: &Mat3<T>) -> Mat3<T> {
    let mut inv = [[T::ZERO; 3]; 3];
    for col in 0..3 {
        for row in col..3 {
            let mut acc = if row == col { T::ONE } else { T::ZERO };
            for k in col..row {
                acc -= l[row][k] * inv[k][col];
            }
            inv[row][col] = acc / l[row][row];
        }
    }
    inv
}

/// Draws `μ + L⁻ᵀ·z` for a standard-normal `z`.
pub fn sample_gaussian<T: Real>(mean: &Vec3<T>, l: &TriangularPrecision<T>, z: &Vec3<T>) -> Vec3<T> {
    linalg::add(mean, &l.solve_transpose(z))
}

/// A Gaussian expressed in a probe's coordinate frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeFrameGaussian<T> {
    pub mean_probe: Vec3<T>,
    /// `R_W·L`, generally not triangular.
    pub l_probe: Mat3<T>,
    /// `l_probe·l_probeᵀ`
    pub precision_probe: Mat3<T>,
}

/// Moves a world-frame Gaussian into the frame of `pose` (which maps
/// probe → world, so the world → probe transform is its inverse).
pub fn to_probe_frame<T: Real>(
    mean: &Vec3<T>,
    l: &TriangularPrecision<T>,
    pose: &ProbePose,
) -> ProbeFrameGaussian<T> {
    let inv = pose.inverse();
    let rot: Mat3<T> = linalg::cast_mat(inv.rotation());
    let trans: Vec3<T> = linalg::cast_vec(inv.translation());
    let mean_probe = linalg::add(&linalg::mat_vec(&rot, mean), &trans);
    let l_probe = linalg::mat_mul(&rot, l.matrix());
    ProbeFrameGaussian {
        mean_probe,
        l_probe,
        precision_probe: linalg::gram(&l_probe),
    }
}

impl<T: Real> ProbeFrameGaussian<T> {
    /// Squared Mahalanobis distance from the in-plane point `(x₁, x₂, 0)`.
    #[inline]
    pub fn mahalanobis_sq(&self, x: [T; 2]) -> T {
        let d = [
            x[0] - self.mean_probe[0],
            x[1] - self.mean_probe[1],
            -self.mean_probe[2],
        ];
        let a = &self.precision_probe;
        a[0][0] * d[0] * d[0]
            + a[1][1] * d[1] * d[1]
            + a[2][2] * d[2] * d[2]
            + T::from_f64(2.0) * (a[0][1] * d[0] * d[1] + a[0][2] * d[0] * d[2] + a[1][2] * d[1] * d[2])
    }

    /// Covariance diagonal in the probe frame: squared row norms of `R_W·L⁻ᵀ`.
    pub fn covariance_diagonal(&self) -> Vec3<T> {
        // R_W·L⁻ᵀ = (l_probe)⁻ᵀ since R_W is orthonormal
        let inv_t = linalg::transpose(&general_inverse(&self.l_probe));
        [0, 1, 2].map(|j| linalg::dot(&inv_t[j], &inv_t[j]))
    }
}

fn general_inverse<T: Real>(m: &Mat3<T>) -> Mat3<T> {
    let d = linalg::det(m);
    let mut inv = [[T::ZERO; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / d;
        }
    }
    inv
}

/// `α·exp(−½·δᵀAδ)` at the lifted point `(x₁, x₂, 0)`.
#[inline]
pub fn evaluate_opacity<T: Real>(x: [T; 2], g: &ProbeFrameGaussian<T>, alpha: T) -> T {
    alpha * (T::from_f64(-0.5) * g.mahalanobis_sq(x)).exp()
}

/// Cholesky factor of a symmetric positive-definite 3×3 matrix.
pub fn cholesky<T: Real>(a: &Mat3<T>) -> Result<Mat3<T>> {
    let mut l = [[T::ZERO; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > T::ZERO) {
                    return Err(Error::invalid("matrix is not positive-definite"));
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Per-Gaussian parameters in unconstrained ("raw") form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianCloud<T = f32> {
    /// World-frame means.
    pub means: Vec<[T; 3]>,
    /// Raw triangular-factor values in the order `L₁₁, L₂₂, L₃₃, L₂₁, L₃₁, L₃₂`.
    pub l_raw: Vec<[T; 6]>,
    /// Intensity logits, `c = σ(raw)`.
    pub intensity_raw: Vec<T>,
    /// Opacity logits, `α = σ(raw)`.
    pub opacity_raw: Vec<T>,
    pub bg_intensity_raw: T,
    pub bg_opacity_raw: T,
    /// Precision floor added to every diagonal entry of `L`.
    pub beta: T,
}

impl<T: Real> GaussianCloud<T> {
    /// An empty cloud with black background of opacity `σ(−4)`.
    pub fn empty(beta: T) -> Self {
        Self {
            means: Vec::new(),
            l_raw: Vec::new(),
            intensity_raw: Vec::new(),
            opacity_raw: Vec::new(),
            bg_intensity_raw: T::from_f64(-4.0),
            bg_opacity_raw: T::from_f64(-4.0),
            beta,
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn push(&mut self, mean: [T; 3], l_raw: [T; 6], intensity_raw: T, opacity_raw: T) {
        self.means.push(mean);
        self.l_raw.push(l_raw);
        self.intensity_raw.push(intensity_raw);
        self.opacity_raw.push(opacity_raw);
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.means.len();
        if self.l_raw.len() != n || self.intensity_raw.len() != n || self.opacity_raw.len() != n {
            return Err(Error::invalid("per-Gaussian arrays differ in length"));
        }
        if !(self.beta > T::ZERO) {
            return Err(Error::invalid(format!("beta must be > 0, got {}", self.beta)));
        }
        let finite = self.means.iter().flatten().all(|v| v.is_finite())
            && self.l_raw.iter().flatten().all(|v| v.is_finite())
            && self.intensity_raw.iter().all(|v| v.is_finite())
            && self.opacity_raw.iter().all(|v| v.is_finite())
            && self.bg_intensity_raw.is_finite()
            && self.bg_opacity_raw.is_finite()
            && self.beta.is_finite();
        if !finite {
            return Err(Error::invalid("cloud contains non-finite parameters"));
        }
        Ok(())
    }

    #[inline]
    pub fn l_factor(&self, i: usize) -> TriangularPrecision<T> {
        TriangularPrecision::build_unchecked(&self.l_raw[i], self.beta)
    }

    #[inline]
    pub fn alpha(&self, i: usize) -> T {
        self.opacity_raw[i].sigmoid()
    }

    #[inline]
    pub fn intensity(&self, i: usize) -> T {
        self.intensity_raw[i].sigmoid()
    }

    pub fn bg_alpha(&self) -> T {
        self.bg_opacity_raw.sigmoid()
    }

    pub fn bg_intensity(&self) -> T {
        self.bg_intensity_raw.sigmoid()
    }

    pub fn cast<U: Real>(&self) -> GaussianCloud<U> {
        let c = |v: &T| U::from_f64(v.to_f64());
        GaussianCloud {
            means: self.means.iter().map(|m| m.map(|v| c(&v))).collect(),
            l_raw: self.l_raw.iter().map(|m| m.map(|v| c(&v))).collect(),
            intensity_raw: self.intensity_raw.iter().map(c).collect(),
            opacity_raw: self.opacity_raw.iter().map(c).collect(),
            bg_intensity_raw: c(&self.bg_intensity_raw),
            bg_opacity_raw: c(&self.bg_opacity_raw),
            beta: c(&self.beta),
        }
    }

    /// Keeps the Gaussians whose `keep` flag is set.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        let mut it = keep.iter();
        self.means.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.l_raw.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.intensity_raw.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.opacity_raw.retain(|_| *it.next().unwrap());
    }

    /// Re-expresses the scene after scaling world coordinates by `factor`
    /// (`x' = factor·x`). Exact: `L' = L/factor` with `β' = β/factor`.
    pub fn scaled(&self, factor: T) -> Self {
        let root = factor.sqrt();
        Self {
            means: self.means.iter().map(|m| m.map(|v| v * factor)).collect(),
            l_raw: self
                .l_raw
                .iter()
                .map(|r| [r[0] / root, r[1] / root, r[2] / root, r[3] / factor, r[4] / factor, r[5] / factor])
                .collect(),
            intensity_raw: self.intensity_raw.clone(),
            opacity_raw: self.opacity_raw.clone(),
            bg_intensity_raw: self.bg_intensity_raw,
            bg_opacity_raw: self.bg_opacity_raw,
            beta: self.beta / factor,
        }
    }

    /// Applies the rigid motion `pose` to every Gaussian. The rotated
    /// precision is re-factorized by Cholesky; fails if a resulting diagonal
    /// entry falls below `β` (not representable with this floor).
    pub fn rigidly_transformed(&self, pose: &ProbePose) -> Result<Self> {
        let rot: Mat3<T> = linalg::cast_mat(pose.rotation());
        let trans: Vec3<T> = linalg::cast_vec(pose.translation());
        let mut out = self.clone();
        for i in 0..self.len() {
            out.means[i] = linalg::add(&linalg::mat_vec(&rot, &self.means[i]), &trans);
            let a = self.l_factor(i).precision();
            let rotated = linalg::mat_mul(&linalg::mat_mul(&rot, &a), &linalg::transpose(&rot));
            let l = cholesky(&rotated)?;
            let mut raw = [T::ZERO; 6];
            for (slot, &(r, c)) in RAW_LAYOUT.iter().enumerate() {
                raw[slot] = if r == c {
                    let s = l[r][r] - self.beta;
                    if s < T::ZERO {
                        return Err(Error::invalid("rotated factor diagonal below beta"));
                    }
                    s.sqrt()
                } else {
                    l[r][c]
                };
            }
            out.l_raw[i] = raw;
        }
        Ok(out)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

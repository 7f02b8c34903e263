//! Rigid probe poses.
//!
//! A [`ProbePose`] maps probe-frame coordinates (mm) to world coordinates:
//! `world = R · probe + t`. The imaging plane is `z = 0` in the probe frame.
//! Rendering needs the opposite direction, which [`ProbePose::inverse`]
//! provides.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat3, Vec3};

/// Tolerance on `RᵀR = I` and `det R = 1` when validating user-supplied matrices.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRecord", into = "PoseRecord")]
pub struct ProbePose {
    rotation: Mat3<f64>,
    translation: Vec3<f64>,
}

/// On-disk layout: row-major rotation followed by translation.
#[derive(Serialize, Deserialize)]
struct PoseRecord {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl TryFrom<PoseRecord> for ProbePose {
    type Error = Error;

    fn try_from(r: PoseRecord) -> Result<Self> {
        let mut raw = [0.0; 12];
        raw[..9].copy_from_slice(&r.rotation);
        raw[9..].copy_from_slice(&r.translation);
        ProbePose::from_row_major(&raw)
    }
}

impl From<ProbePose> for PoseRecord {
    fn from(p: ProbePose) -> Self {
        let raw = p.to_row_major();
        let mut rotation = [0.0; 9];
        rotation.copy_from_slice(&raw[..9]);
        PoseRecord {
            rotation,
            translation: [raw[9], raw[10], raw[11]],
        }
    }
}

impl Default for ProbePose {
    fn default() -> Self {
        Self::identity()
    }
}

fn rot_x(a: f64) -> Mat3<f64> {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn rot_y(a: f64) -> Mat3<f64> {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn rot_z(a: f64) -> Mat3<f64> {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

impl ProbePose {
    pub fn identity() -> Self {
        Self {
            rotation: linalg::identity(),
            translation: [0.0; 3],
        }
    }

    /// Validated constructor.
    pub fn new(rotation: Mat3<f64>, translation: Vec3<f64>) -> Result<Self> {
        if rotation.iter().flatten().chain(&translation).any(|v| !v.is_finite()) {
            return Err(Error::invalid("pose contains non-finite values"));
        }
        let rtr = linalg::mat_mul(&linalg::transpose(&rotation), &rotation);
        let err = linalg::max_abs_diff(&rtr, &linalg::identity());
        if err > ORTHONORMAL_TOL {
            return Err(Error::invalid(format!(
                "rotation is not orthonormal (max |RᵀR − I| = {err:.3e})"
            )));
        }
        let d = linalg::det(&rotation);
        if (d - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::invalid(format!("rotation has determinant {d}, expected +1")));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: Vec3<f64>) -> Self {
        Self {
            rotation: linalg::identity(),
            translation: t,
        }
    }

    /// Intrinsic Z-Y-X Euler angles in degrees: `R = Rz(rz) · Ry(ry) · Rx(rx)`.
    pub fn from_euler_zyx_deg(rx: f64, ry: f64, rz: f64, t: Vec3<f64>) -> Self {
        let r = linalg::mat_mul(
            &rot_z(rz.to_radians()),
            &linalg::mat_mul(&rot_y(ry.to_radians()), &rot_x(rx.to_radians())),
        );
        Self {
            rotation: r,
            translation: t,
        }
    }

    /// Inverse of [`from_euler_zyx_deg`](Self::from_euler_zyx_deg), returning
    /// `(rx, ry, rz)` in degrees. Singular at `ry = ±90°`, where `rx` and `rz`
    /// are not separable; there `rz` is reported as 0.
    pub fn to_euler_zyx_deg(&self) -> [f64; 3] {
        let r = &self.rotation;
        let sy = (-r[2][0]).clamp(-1.0, 1.0);
        let ry = sy.asin();
        if sy.abs() > 1.0 - 1e-12 {
            let rx = (-r[1][2]).atan2(r[1][1]);
            return [rx.to_degrees(), ry.to_degrees(), 0.0];
        }
        let rx = r[2][1].atan2(r[2][2]);
        let rz = r[1][0].atan2(r[0][0]);
        [rx.to_degrees(), ry.to_degrees(), rz.to_degrees()]
    }

    /// Twelve floats: row-major rotation then translation.
    pub fn from_row_major(raw: &[f64; 12]) -> Result<Self> {
        let rotation = [
            [raw[0], raw[1], raw[2]],
            [raw[3], raw[4], raw[5]],
            [raw[6], raw[7], raw[8]],
        ];
        Self::new(rotation, [raw[9], raw[10], raw[11]])
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2], t[0],
            t[1], t[2],
        ]
    }

    pub fn rotation(&self) -> &Mat3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3<f64> {
        &self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = linalg::transpose(&self.rotation);
        let t = linalg::mat_vec(&rt, &self.translation);
        Self {
            rotation: rt,
            translation: [-t[0], -t[1], -t[2]],
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &ProbePose) -> Self {
        let rotation = linalg::mat_mul(&self.rotation, &other.rotation);
        let translation = linalg::add(
            &linalg::mat_vec(&self.rotation, &other.translation),
            &self.translation,
        );
        Self {
            rotation,
            translation,
        }
    }

    pub fn transform_point(&self, p: &Vec3<f64>) -> Vec3<f64> {
        linalg::add(&linalg::mat_vec(&self.rotation, p), &self.translation)
    }

    /// Probe plane at world height `z`, looking down the world z axis.
    pub fn axial(z: f64) -> Self {
        Self::from_translation([0.0, 0.0, z])
    }

    /// Plane of constant world `y`; probe x → world x, probe y → world z.
    pub fn coronal(y: f64) -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]],
            translation: [0.0, y, 0.0],
        }
    }

    /// Plane of constant world `x`; probe x → world y, probe y → world z.
    pub fn sagittal(x: f64) -> Self {
        Self {
            rotation: [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            translation: [x, 0.0, 0.0],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_identity(p: &ProbePose, tol: f64) {
        let err = linalg::max_abs_diff(p.rotation(), &linalg::identity());
        assert!(err <= tol, "rotation error {err}");
        for t in p.translation() {
            assert!(t.abs() <= tol);
        }
    }

    #[test]
    fn orthogonal_planes_are_proper_rotations() {
        for p in [
            ProbePose::axial(1.0),
            ProbePose::coronal(2.0),
            ProbePose::sagittal(-3.0),
        ] {
            ProbePose::new(*p.rotation(), *p.translation()).unwrap();
        }
        // coronal: probe (a, b, 0) lands on world (a, y, b)
        let w = ProbePose::coronal(2.0).transform_point(&[1.0, 5.0, 0.0]);
        assert_eq!(w, [1.0, 2.0, 5.0]);
        let w = ProbePose::sagittal(-3.0).transform_point(&[1.0, 5.0, 0.0]);
        assert_eq!(w, [-3.0, 1.0, 5.0]);
    }

    #[test]
    fn rejects_non_orthonormal() {
        let mut raw = ProbePose::identity().to_row_major();
        raw[0] = 1.1;
        assert!(ProbePose::from_row_major(&raw).is_err());
        // reflection
        let raw = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0];
        assert!(ProbePose::from_row_major(&raw).is_err());
    }

    #[test]
    fn gimbal_lock_reports_zero_yaw() {
        let p = ProbePose::from_euler_zyx_deg(30.0, 90.0, 0.0, [0.0; 3]);
        let e = p.to_euler_zyx_deg();
        let q = ProbePose::from_euler_zyx_deg(e[0], e[1], e[2], [0.0; 3]);
        assert!(linalg::max_abs_diff(p.rotation(), q.rotation()) < 1e-9);
        assert_eq!(e[2], 0.0);
    }

    proptest! {
        #[test]
        fn euler_round_trip(rx in -179.0..179.0f64, ry in -89.0..89.0f64, rz in -179.0..179.0f64,
                            tx in -50.0..50.0f64, ty in -50.0..50.0f64, tz in -50.0..50.0f64) {
            let p = ProbePose::from_euler_zyx_deg(rx, ry, rz, [tx, ty, tz]);
            let rtr = linalg::mat_mul(&linalg::transpose(p.rotation()), p.rotation());
            prop_assert!(linalg::max_abs_diff(&rtr, &linalg::identity()) < 1e-9);
            prop_assert!((linalg::det(p.rotation()) - 1.0).abs() < 1e-9);
            let e = p.to_euler_zyx_deg();
            prop_assert!((e[0] - rx).abs() < 1e-9);
            prop_assert!((e[1] - ry).abs() < 1e-9);
            prop_assert!((e[2] - rz).abs() < 1e-9);
        }

        #[test]
        fn compose_with_inverse_is_identity(rx in -180.0..180.0f64, ry in -90.0..90.0f64, rz in -180.0..180.0f64,
                                            tx in -50.0..50.0f64) {
            let p = ProbePose::from_euler_zyx_deg(rx, ry, rz, [tx, -tx, 2.0 * tx]);
            assert_identity(&p.compose(&p.inverse()), 1e-9);
            assert_identity(&p.inverse().compose(&p), 1e-9);
        }

        #[test]
        fn row_major_round_trip(rx in -180.0..180.0f64, ry in -90.0..90.0f64, tz in -50.0..50.0f64) {
            let p = ProbePose::from_euler_zyx_deg(rx, ry, 0.0, [0.0, 1.0, tz]);
            let q = ProbePose::from_row_major(&p.to_row_major()).unwrap();
            prop_assert_eq!(p, q);
        }
    }
}

use super::volume::Volume;
use super::SliceImage;
use crate::linalg::Vec3;
use crate::rasterizer::SliceSpec;

/// Slack (in voxels) for treating a coordinate on the outer voxel plane as inside.
const EDGE_SLACK: f64 = 1e-9;

/// Trilinear interpolation at a world position (mm); 0 outside the grid of
/// voxel centres.
pub fn trilinear(volume: &Volume, world: &Vec3<f64>) -> f64 {
    let [d, h, w] = volume.dims;
    let to_index = |x: f64, n: usize| x / volume.spacing + (n as f64 - 1.0) / 2.0;
    let coords = [to_index(world[2], d), to_index(world[1], h), to_index(world[0], w)];
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let n = volume.dims[a];
        let last = (n - 1) as f64;
        let c = coords[a];
        if !(c >= -EDGE_SLACK && c <= last + EDGE_SLACK) {
            return 0.0;
        }
        let c = c.clamp(0.0, last);
        let b = (c.floor() as usize).min(n.saturating_sub(2));
        base[a] = b;
        frac[a] = if n == 1 { 0.0 } else { c - b as f64 };
    }
    let mut acc = 0.0;
    for corner in 0..8 {
        let off = [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
        let mut wgt = 1.0;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            wgt *= if off[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            idx[a] = (base[a] + off[a]).min(volume.dims[a] - 1);
        }
        if wgt != 0.0 {
            acc += wgt * volume.at(idx[0], idx[1], idx[2]) as f64;
        }
    }
    acc
}

/// Samples the volume on the probe plane of `spec`.
pub fn sample_slice(volume: &Volume, spec: &SliceSpec) -> SliceImage {
    let mut pixels = Vec::with_capacity(spec.num_pixels());
    for v in 0..spec.height {
        for u in 0..spec.width {
            pixels.push(trilinear(volume, &spec.pixel_to_world(u, v)) as f32);
        }
    }
    SliceImage {
        width: spec.width,
        height: spec.height,
        spacing: spec.spacing,
        pose: spec.pose,
        pixels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_phantom, PhantomKind};
    use crate::pose::ProbePose;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent reference: explicit 8-neighbour blend with per-axis lerps.
    fn reference(volume: &Volume, p: &Vec3<f64>) -> f64 {
        let [d, h, w] = volume.dims;
        let s = volume.spacing;
        let x = p[0] / s + (w as f64 - 1.0) * 0.5;
        let y = p[1] / s + (h as f64 - 1.0) * 0.5;
        let z = p[2] / s + (d as f64 - 1.0) * 0.5;
        if x < 0.0 || y < 0.0 || z < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 || z > (d - 1) as f64 {
            return 0.0;
        }
        let (x0, y0, z0) = (x.floor() as usize, y.floor() as usize, z.floor() as usize);
        let (x1, y1, z1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1), (z0 + 1).min(d - 1));
        let (fx, fy, fz) = (x - x0 as f64, y - y0 as f64, z - z0 as f64);
        let g = |k, j, i| volume.at(k, j, i) as f64;
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let c00 = lerp(g(z0, y0, x0), g(z0, y0, x1), fx);
        let c01 = lerp(g(z0, y1, x0), g(z0, y1, x1), fx);
        let c10 = lerp(g(z1, y0, x0), g(z1, y0, x1), fx);
        let c11 = lerp(g(z1, y1, x0), g(z1, y1, x1), fx);
        lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fz)
    }

    #[test]
    fn axial_plane_reproduces_voxels() {
        let vol = make_phantom(PhantomKind::Shells, [10, 12, 14], 0.6, 2).unwrap();
        for k in [0, 4, 9] {
            let spec = SliceSpec::new(14, 12, 0.6, ProbePose::axial(vol.plane_z(k))).unwrap();
            let img = sample_slice(&vol, &spec);
            for j in 0..12 {
                for i in 0..14 {
                    assert_eq!(img.get(i, j), vol.at(k, j, i));
                }
            }
        }
    }

    #[test]
    fn constant_volume_constant_slice() {
        let vol = Volume::filled([9, 9, 9], 1.0, 0.4).unwrap();
        let spec = SliceSpec::new(5, 5, 0.5, ProbePose::from_euler_zyx_deg(17.0, -33.0, 61.0, [0.2, -0.3, 0.1])).unwrap();
        let img = sample_slice(&vol, &spec);
        assert!(img.pixels.iter().all(|&p| (p - 0.4).abs() < 1e-6));
    }

    #[test]
    fn outside_is_zero() {
        let vol = Volume::filled([8, 8, 8], 1.0, 0.7).unwrap();
        assert_eq!(trilinear(&vol, &[0.0, 0.0, 3.6]), 0.0);
        assert_eq!(trilinear(&vol, &[0.0, 0.0, 3.5]), 0.7f32 as f64);
    }

    #[test]
    fn random_poses_match_reference() {
        let vol = make_phantom(PhantomKind::Shells, [16, 16, 16], 0.6, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let pose = ProbePose::from_euler_zyx_deg(
                rng.random_range(-180.0..180.0),
                rng.random_range(-90.0..90.0),
                rng.random_range(-180.0..180.0),
                [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
            );
            let spec = SliceSpec::new(20, 20, 0.5, pose).unwrap();
            let img = sample_slice(&vol, &spec);
            for v in 0..20 {
                for u in 0..20 {
                    let r = reference(&vol, &spec.pixel_to_world(u, v));
                    assert!((img.get(u, v) as f64 - r).abs() <= 1e-6);
                }
            }
        }
    }
}

//! Pinhole camera model, ray generation, and point sampling along rays.
//!
//! Convention: the camera frame is right-handed, looking along -z with +x
//! right and +y up. Pixel (row i, col j) shoots a ray through its center,
//! i.e. camera-space direction ((j+0.5-cx)/fx, -(i+0.5-cy)/fy, -1) rotated
//! into world space and normalized.

use rand::Rng;

use crate::image_buf::Image;
use crate::rng::indexed_rng;
use crate::{Error, Result};

/// One posed observation: image, camera-to-world rigid transform, pinhole
/// intrinsics, and the ray bounds used when sampling the scene.
#[derive(Debug, Clone)]
pub struct CameraView {
    pub image: Image,
    /// 4x4 row-major rigid transform, camera frame to world frame.
    pub cam2world: [f64; 16],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub near: f64,
    pub far: f64,
}

const ORTHONORMAL_TOL: f64 = 1e-6;

impl CameraView {
    /// Checks the rigid-pose, intrinsics, bounds, and image-range invariants.
    pub fn validate(&self) -> Result<()> {
        if self.fx == 0.0 || self.fy == 0.0 || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be finite and non-zero, got fx={}, fy={}",
                self.fx, self.fy
            )));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::InvalidIntrinsics("principal point must be finite".into()));
        }
        let m = &self.cam2world;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera("pose contains non-finite entries".into()));
        }
        // Upper-left 3x3 must be orthonormal with determinant +1.
        let r = |i: usize, j: usize| m[i * 4 + j];
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..3).map(|k| r(k, a) * r(k, b)).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                if (dot - expect).abs() > ORTHONORMAL_TOL {
                    return Err(Error::InvalidCamera(format!(
                        "rotation columns {a},{b} not orthonormal (dot={dot})"
                    )));
                }
            }
        }
        let det = r(0, 0) * (r(1, 1) * r(2, 2) - r(1, 2) * r(2, 1))
            - r(0, 1) * (r(1, 0) * r(2, 2) - r(1, 2) * r(2, 0))
            + r(0, 2) * (r(1, 0) * r(2, 1) - r(1, 1) * r(2, 0));
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidCamera(format!("rotation determinant {det} != 1")));
        }
        if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
            return Err(Error::InvalidCamera("bottom row must be (0,0,0,1)".into()));
        }
        if !(self.near > 0.0 && self.near < self.far && self.far.is_finite()) {
            return Err(Error::InvalidBounds {
                near: self.near,
                far: self.far,
            });
        }
        if !self.image.is_finite_unit() {
            return Err(Error::InvalidCamera("image values must be finite in [0,1]".into()));
        }
        Ok(())
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let m = &self.cam2world;
        [
            [m[0], m[1], m[2]],
            [m[4], m[5], m[6]],
            [m[8], m[9], m[10]],
        ]
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.cam2world[3], self.cam2world[7], self.cam2world[11]]
    }

    /// Rotates a camera-frame vector into the world frame.
    pub fn rotate_to_world(&self, v: [f64; 3]) -> [f64; 3] {
        let r = self.rotation();
        [
            r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
            r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
            r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
        ]
    }

    /// Rotates a world-frame vector into the camera frame (transpose of R).
    pub fn rotate_to_camera(&self, v: [f64; 3]) -> [f64; 3] {
        let r = self.rotation();
        [
            r[0][0] * v[0] + r[1][0] * v[1] + r[2][0] * v[2],
            r[0][1] * v[0] + r[1][1] * v[1] + r[2][1] * v[2],
            r[0][2] * v[0] + r[1][2] * v[1] + r[2][2] * v[2],
        ]
    }
}

/// One ray per pixel, directions unit-length in world space.
#[derive(Debug, Clone)]
pub struct RayBundle {
    pub origins: Vec<[f64; 3]>,
    pub directions: Vec<[f64; 3]>,
    /// (row, col) of the pixel each ray passes through.
    pub pixel_index: Vec<(u32, u32)>,
}

impl RayBundle {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Sub-bundle at the given ray indices; used for ray-minibatch training.
    pub fn select(&self, indices: &[usize]) -> RayBundle {
        RayBundle {
            origins: indices.iter().map(|&i| self.origins[i]).collect(),
            directions: indices.iter().map(|&i| self.directions[i]).collect(),
            pixel_index: indices.iter().map(|&i| self.pixel_index[i]).collect(),
        }
    }
}

/// Per-ray sample positions, parameters, step sizes, and view directions,
/// flattened as `n_rays * n_samples` with the sample index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub n_rays: usize,
    pub n_samples: usize,
    pub positions: Vec<[f64; 3]>,
    pub t_values: Vec<f64>,
    pub deltas: Vec<f64>,
    pub view_dirs: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleStrategy {
    Midpoint,
    Stratified,
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Builds the full-frame ray bundle for a camera at the given resolution.
pub fn generate_rays(camera: &CameraView, width: usize, height: usize) -> Result<RayBundle> {
    if width == 0 || height == 0 {
        return Err(Error::Contract("resolution must be at least 1x1".into()));
    }
    camera.validate()?;

    let n = width * height;
    let mut origins = Vec::with_capacity(n);
    let mut directions = Vec::with_capacity(n);
    let mut pixel_index = Vec::with_capacity(n);
    let origin = camera.translation();

    for i in 0..height {
        for j in 0..width {
            let dir_cam = [
                (j as f64 + 0.5 - camera.cx) / camera.fx,
                -(i as f64 + 0.5 - camera.cy) / camera.fy,
                -1.0,
            ];
            let dir_world = camera.rotate_to_world(dir_cam);
            let inv_len = 1.0 / norm3(dir_world);
            origins.push(origin);
            directions.push([
                dir_world[0] * inv_len,
                dir_world[1] * inv_len,
                dir_world[2] * inv_len,
            ]);
            pixel_index.push((i as u32, j as u32));
        }
    }

    Ok(RayBundle {
        origins,
        directions,
        pixel_index,
    })
}

/// Samples points along each ray in `[near, far]`.
///
/// Midpoint places t_i at bin centers deterministically; stratified draws
/// t_i uniformly inside bin i, reproducibly from `seed` and the ray index.
/// Step sizes are defined as `deltas[i] = t[i+1] - t[i]` for interior
/// samples and `far - t[last]` for the final one.
pub fn sample_along_rays(
    rays: &RayBundle,
    near: f64,
    far: f64,
    n_samples: usize,
    strategy: SampleStrategy,
    seed: u64,
) -> Result<SampleSet> {
    if !(near > 0.0 && near < far && far.is_finite()) {
        return Err(Error::InvalidBounds { near, far });
    }
    if n_samples == 0 {
        return Err(Error::Contract("n_samples must be at least 1".into()));
    }

    let n_rays = rays.len();
    let total = n_rays * n_samples;
    let bin = (far - near) / n_samples as f64;

    let mut positions = Vec::with_capacity(total);
    let mut t_values = Vec::with_capacity(total);
    let mut deltas = Vec::with_capacity(total);

    for ray in 0..n_rays {
        let o = rays.origins[ray];
        let d = rays.directions[ray];
        let base = t_values.len();
        match strategy {
            SampleStrategy::Midpoint => {
                for s in 0..n_samples {
                    t_values.push(near + (s as f64 + 0.5) * bin);
                }
            }
            SampleStrategy::Stratified => {
                let mut rng = indexed_rng(seed, "stratified", ray as u64);
                for s in 0..n_samples {
                    let u: f64 = rng.gen();
                    t_values.push(near + (s as f64 + u) * bin);
                }
            }
        }
        for s in 0..n_samples {
            let t = t_values[base + s];
            positions.push([o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]]);
            let delta = if s + 1 < n_samples {
                t_values[base + s + 1] - t
            } else {
                far - t
            };
            deltas.push(delta);
        }
    }

    Ok(SampleSet {
        n_rays,
        n_samples,
        positions,
        t_values,
        deltas,
        view_dirs: rays.directions.clone(),
    })
}

/// Identity pose at the world origin.
pub fn identity_pose() -> [f64; 16] {
    let mut m = [0.0; 16];
    m[0] = 1.0;
    m[5] = 1.0;
    m[10] = 1.0;
    m[15] = 1.0;
    m
}

/// Pose looking from `eye` toward `target` with the given world up-vector.
/// The camera's -z axis points at the target.
pub fn look_at_pose(eye: [f64; 3], target: [f64; 3], up: [f64; 3]) -> [f64; 16] {
    let fwd = {
        let v = [target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]];
        let n = norm3(v);
        [v[0] / n, v[1] / n, v[2] / n]
    };
    let cross = |a: [f64; 3], b: [f64; 3]| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let mut right = cross(fwd, up);
    let n = norm3(right);
    if n < 1e-9 {
        // View direction parallel to up; pick any perpendicular axis.
        right = cross(fwd, [1.0, 0.0, 0.0]);
        let n2 = norm3(right);
        right = if n2 < 1e-9 {
            cross(fwd, [0.0, 1.0, 0.0])
        } else {
            right
        };
    }
    let n = norm3(right);
    let right = [right[0] / n, right[1] / n, right[2] / n];
    let cam_up = cross(right, fwd);

    // Columns: +x = right, +y = up, +z = -forward.
    [
        right[0], cam_up[0], -fwd[0], eye[0],
        right[1], cam_up[1], -fwd[1], eye[1],
        right[2], cam_up[2], -fwd[2], eye[2],
        0.0, 0.0, 0.0, 1.0,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn camera(pose: [f64; 16], w: usize, h: usize, fx: f64, cx: f64, cy: f64) -> CameraView {
        CameraView {
            image: Image::new(w, h),
            cam2world: pose,
            fx,
            fy: fx,
            cx,
            cy,
            near: 0.1,
            far: 2.0,
        }
    }

    #[test]
    fn principal_axis_ray() {
        let cam = camera(identity_pose(), 1, 1, 1.0, 0.5, 0.5);
        let rays = generate_rays(&cam, 1, 1).unwrap();
        assert_eq!(rays.len(), 1);
        assert_eq!(rays.origins[0], [0.0, 0.0, 0.0]);
        assert_relative_eq!(rays.directions[0][0], 0.0);
        assert_relative_eq!(rays.directions[0][1], 0.0);
        assert_relative_eq!(rays.directions[0][2], -1.0);
    }

    #[test]
    fn translation_only_pose_moves_origins() {
        let mut pose = identity_pose();
        pose[3] = 1.0;
        pose[7] = 2.0;
        pose[11] = 3.0;
        let cam = camera(pose, 3, 2, 2.0, 1.5, 1.0);
        let rays = generate_rays(&cam, 3, 2).unwrap();
        assert_eq!(rays.len(), 6);
        for o in &rays.origins {
            assert_eq!(*o, [1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn pinhole_direction_2x2() {
        // Pixel (0,0) of a 2x2 image with fx=fy=1, cx=cy=1: camera direction
        // (-0.5, 0.5, -1) normalized by sqrt(1.5).
        let cam = camera(identity_pose(), 2, 2, 1.0, 1.0, 1.0);
        let rays = generate_rays(&cam, 2, 2).unwrap();
        let d = rays.directions[0];
        assert_eq!(rays.pixel_index[0], (0, 0));
        assert_relative_eq!(d[0], -0.4082482904638631, epsilon = 1e-12);
        assert_relative_eq!(d[1], 0.4082482904638631, epsilon = 1e-12);
        assert_relative_eq!(d[2], -0.8164965809277261, epsilon = 1e-12);
    }

    #[test]
    fn non_rigid_pose_rejected() {
        let mut pose = identity_pose();
        pose[0] = 2.0; // scale, not a rotation
        let cam = camera(pose, 1, 1, 1.0, 0.5, 0.5);
        assert!(matches!(
            generate_rays(&cam, 1, 1),
            Err(Error::InvalidCamera(_))
        ));
    }

    #[test]
    fn zero_focal_rejected() {
        let cam = camera(identity_pose(), 1, 1, 0.0, 0.5, 0.5);
        assert!(matches!(
            generate_rays(&cam, 1, 1),
            Err(Error::InvalidIntrinsics(_))
        ));
    }

    #[test]
    fn midpoint_samples_analytic() {
        // near=0 is out of contract (near > 0), so shift by 1 and check the
        // same spacing: t = 1 + [0.125, 0.375, 0.625, 0.875].
        let rays = RayBundle {
            origins: vec![[0.0, 0.0, 0.0]],
            directions: vec![[0.0, 0.0, -1.0]],
            pixel_index: vec![(0, 0)],
        };
        let s = sample_along_rays(&rays, 1.0, 2.0, 4, SampleStrategy::Midpoint, 0).unwrap();
        let expect_t = [1.125, 1.375, 1.625, 1.875];
        for (t, e) in s.t_values.iter().zip(expect_t) {
            assert_relative_eq!(*t, e, epsilon = 1e-15);
        }
        // Interior deltas are the sample spacing; the final delta closes the
        // interval at `far` (= half a bin for midpoint placement).
        let expect_d = [0.25, 0.25, 0.25, 0.125];
        for (d, e) in s.deltas.iter().zip(expect_d) {
            assert_relative_eq!(*d, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn stratified_stays_in_bins() {
        let rays = RayBundle {
            origins: vec![[0.0, 0.0, 0.0]; 8],
            directions: vec![[0.0, 0.0, -1.0]; 8],
            pixel_index: (0..8).map(|i| (0, i as u32)).collect(),
        };
        let n = 16;
        let s = sample_along_rays(&rays, 1.0, 3.0, n, SampleStrategy::Stratified, 9).unwrap();
        let bin = 2.0 / n as f64;
        for ray in 0..8 {
            for i in 0..n {
                let t = s.t_values[ray * n + i];
                let lo = 1.0 + i as f64 * bin;
                assert!(t >= lo && t < lo + bin, "t={t} outside bin {i}");
            }
        }
    }

    #[test]
    fn stratified_is_seed_deterministic() {
        let rays = RayBundle {
            origins: vec![[1.0, 0.0, 0.0]; 3],
            directions: vec![[0.0, 0.0, -1.0]; 3],
            pixel_index: vec![(0, 0), (0, 1), (0, 2)],
        };
        let a = sample_along_rays(&rays, 0.5, 2.5, 7, SampleStrategy::Stratified, 7).unwrap();
        let b = sample_along_rays(&rays, 0.5, 2.5, 7, SampleStrategy::Stratified, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_along_rays(&rays, 0.5, 2.5, 7, SampleStrategy::Stratified, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_bounds_rejected() {
        let rays = RayBundle {
            origins: vec![[0.0; 3]],
            directions: vec![[0.0, 0.0, -1.0]],
            pixel_index: vec![(0, 0)],
        };
        assert!(matches!(
            sample_along_rays(&rays, 2.0, 1.0, 4, SampleStrategy::Midpoint, 0),
            Err(Error::InvalidBounds { .. })
        ));
    }

    #[test]
    fn world_camera_round_trip() {
        let pose = look_at_pose([2.0, -1.5, 1.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
        let cam = camera(pose, 4, 4, 3.0, 2.0, 2.0);
        cam.validate().unwrap();
        let v = [0.3, -0.7, 0.648];
        let back = cam.rotate_to_world(cam.rotate_to_camera(v));
        for k in 0..3 {
            assert_relative_eq!(back[k], v[k], epsilon = 1e-9);
        }
    }

    #[test]
    fn look_at_points_minus_z_at_target() {
        let eye = [0.0, 3.0, 1.0];
        let pose = look_at_pose(eye, [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
        let cam = camera(pose, 1, 1, 1.0, 0.5, 0.5);
        cam.validate().unwrap();
        let rays = generate_rays(&cam, 1, 1).unwrap();
        // Central ray should head from eye toward the origin.
        let d = rays.directions[0];
        let n = (eye[0] * eye[0] + eye[1] * eye[1] + eye[2] * eye[2]).sqrt();
        for k in 0..3 {
            assert_relative_eq!(d[k], -eye[k] / n, epsilon = 1e-12);
        }
    }
}

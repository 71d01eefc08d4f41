//! Synthetic multi-view scene generation: analytic density/color primitives
//! rendered into posed image datasets through the same emission-absorption
//! compositing as the learned fields.

use rand::Rng;
use rayon::prelude::*;
use std::path::Path;

use crate::geometry::{generate_rays, look_at_pose, sample_along_rays, CameraView};
use crate::image_buf::Image;
use crate::renderer::{composite, RenderConfig};
use crate::rng::indexed_rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimitiveShape {
    Sphere,
    Box,
    Torus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColorRule {
    Constant([f64; 3]),
    /// Affine map of position within the unit box: channel c = (p[c]+1)/2.
    PositionGradient,
}

#[derive(Debug, Clone, Copy)]
pub struct Primitive {
    pub shape: PrimitiveShape,
    pub center: [f64; 3],
    /// Sphere: size[0] = radius. Box: per-axis half extents.
    /// Torus (z axis): size[0] = major radius, size[1] = minor radius.
    pub size: [f64; 3],
    pub density: f64,
    pub color: ColorRule,
    /// 0 = hard indicator boundary; > 0 = smooth sigmoid falloff width.
    pub falloff: f64,
}

impl Primitive {
    /// Signed distance to the surface, negative inside.
    fn sdf(&self, p: [f64; 3]) -> f64 {
        let q = [
            p[0] - self.center[0],
            p[1] - self.center[1],
            p[2] - self.center[2],
        ];
        match self.shape {
            PrimitiveShape::Sphere => {
                (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt() - self.size[0]
            }
            PrimitiveShape::Box => {
                let d = [
                    q[0].abs() - self.size[0],
                    q[1].abs() - self.size[1],
                    q[2].abs() - self.size[2],
                ];
                let outside =
                    (d[0].max(0.0).powi(2) + d[1].max(0.0).powi(2) + d[2].max(0.0).powi(2)).sqrt();
                let inside = d[0].max(d[1]).max(d[2]).min(0.0);
                outside + inside
            }
            PrimitiveShape::Torus => {
                let ring = (q[0] * q[0] + q[1] * q[1]).sqrt() - self.size[0];
                (ring * ring + q[2] * q[2]).sqrt() - self.size[1]
            }
        }
    }

    /// Conservative bound on how far the primitive extends from its center.
    fn extent(&self) -> f64 {
        match self.shape {
            PrimitiveShape::Sphere => self.size[0],
            PrimitiveShape::Box => {
                (self.size[0] * self.size[0]
                    + self.size[1] * self.size[1]
                    + self.size[2] * self.size[2])
                    .sqrt()
            }
            PrimitiveShape::Torus => self.size[0] + self.size[1],
        }
    }

    fn color_at(&self, p: [f64; 3]) -> [f64; 3] {
        match self.color {
            ColorRule::Constant(c) => c,
            ColorRule::PositionGradient => [
                ((p[0] + 1.0) / 2.0).clamp(0.0, 1.0),
                ((p[1] + 1.0) / 2.0).clamp(0.0, 1.0),
                ((p[2] + 1.0) / 2.0).clamp(0.0, 1.0),
            ],
        }
    }
}

/// Camera ring on the upper hemisphere: seeded azimuth/elevation draws at a
/// fixed radius, all looking at the origin.
#[derive(Debug, Clone, Copy)]
pub struct CameraRing {
    pub n_views: usize,
    pub radius: f64,
    /// Elevation above the xy-plane in radians, (low, high); both positive
    /// keeps all cameras at z > 0.
    pub elevation_range: (f64, f64),
    pub resolution: usize,
    pub seed: u64,
}

impl Default for CameraRing {
    fn default() -> Self {
        CameraRing {
            n_views: 16,
            radius: 3.0,
            elevation_range: (0.15, 1.25),
            resolution: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub camera: CameraRing,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::Config("scene needs at least one primitive".into()));
        }
        let mut extent: f64 = 0.0;
        for prim in &self.primitives {
            if !(prim.density > 0.0) {
                return Err(Error::Config(format!(
                    "primitive density must be positive, got {}",
                    prim.density
                )));
            }
            let center_norm = prim
                .center
                .iter()
                .map(|c| c.abs())
                .fold(0.0f64, f64::max);
            if center_norm + prim.extent() > 1.0 + 1e-9 {
                return Err(Error::Config("primitive extends outside the unit box".into()));
            }
            extent = extent.max(center_norm + prim.extent());
        }
        let scene_extent = 3.0f64.sqrt();
        if self.camera.radius <= scene_extent {
            return Err(Error::Config(format!(
                "camera radius {} must exceed the scene extent {scene_extent:.3}",
                self.camera.radius
            )));
        }
        let (lo, hi) = self.camera.elevation_range;
        if !(lo > 0.0 && lo < hi && hi < std::f64::consts::FRAC_PI_2) {
            return Err(Error::Config("elevation range must satisfy 0 < lo < hi < pi/2".into()));
        }
        if self.camera.n_views == 0 || self.camera.resolution == 0 {
            return Err(Error::Config("need at least one view and a positive resolution".into()));
        }
        Ok(())
    }
}

/// Closed-form density/color field over the scene's primitives.
#[derive(Debug, Clone)]
pub struct SyntheticField {
    primitives: Vec<Primitive>,
}

pub fn make_synthetic_field(spec: &SceneSpec) -> Result<SyntheticField> {
    spec.validate()?;
    Ok(SyntheticField {
        primitives: spec.primitives.clone(),
    })
}

impl SyntheticField {
    /// Post-activation density and color at a point. Hard primitives are
    /// indicator densities on their strict interior; the first containing
    /// primitive (list order) wins where they overlap.
    pub fn query(&self, p: [f64; 3]) -> (f64, [f64; 3]) {
        let mut best_sigma = 0.0;
        let mut best_color = [0.0; 3];
        for prim in &self.primitives {
            let sdf = prim.sdf(p);
            if prim.falloff <= 0.0 {
                if sdf < 0.0 {
                    return (prim.density, prim.color_at(p));
                }
            } else {
                let sigma = prim.density * crate::renderer::sigmoid(-sdf / prim.falloff);
                if sigma > best_sigma {
                    best_sigma = sigma;
                    best_color = prim.color_at(p);
                }
            }
        }
        (best_sigma, best_color)
    }
}

/// Near/far bounds that cover the unit box from a ring camera.
pub fn ring_bounds(radius: f64) -> (f64, f64) {
    let margin = 3.0f64.sqrt();
    (radius - margin, radius + margin)
}

/// The seeded hemisphere cameras of a scene, with empty (zero) images at the
/// ring resolution.
pub fn hemisphere_cameras(ring: &CameraRing) -> Vec<CameraView> {
    let res = ring.resolution;
    let (near, far) = ring_bounds(ring.radius);
    // Focal length that keeps the whole unit box in frame, with margin.
    let half_fov = (3.0f64.sqrt() / ring.radius).asin() * 1.08;
    let focal = (res as f64 / 2.0) / half_fov.tan();

    (0..ring.n_views)
        .map(|i| {
            let mut rng = indexed_rng(ring.seed, "camera", i as u64);
            let azimuth = rng.gen_range(0.0..std::f64::consts::TAU);
            let elevation = rng.gen_range(ring.elevation_range.0..ring.elevation_range.1);
            let eye = [
                ring.radius * elevation.cos() * azimuth.cos(),
                ring.radius * elevation.cos() * azimuth.sin(),
                ring.radius * elevation.sin(),
            ];
            CameraView {
                image: Image::new(res, res),
                cam2world: look_at_pose(eye, [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
                fx: focal,
                fy: focal,
                cx: res as f64 / 2.0,
                cy: res as f64 / 2.0,
                near,
                far,
            }
        })
        .collect()
}

/// Renders the analytic field through the emission-absorption compositor.
pub fn render_analytic(
    field: &SyntheticField,
    camera: &CameraView,
    cfg: &RenderConfig,
) -> Result<Image> {
    let (w, h) = (camera.image.width, camera.image.height);
    let rays = generate_rays(camera, w, h)?;
    let samples = sample_along_rays(&rays, camera.near, camera.far, cfg.n_samples, cfg.strategy, cfg.seed)?;

    let n = cfg.n_samples;
    let pixels: Result<Vec<[f64; 3]>> = (0..rays.len())
        .into_par_iter()
        .map(|ray| {
            let mut sigma = Vec::with_capacity(n);
            let mut colors = Vec::with_capacity(n);
            for s in 0..n {
                let (sg, c) = field.query(samples.positions[ray * n + s]);
                sigma.push(sg);
                colors.push(c);
            }
            let (pixel, _, _) =
                composite(&sigma, &colors, &samples.deltas[ray * n..(ray + 1) * n], cfg.background)?;
            Ok(pixel)
        })
        .collect();

    let mut image = Image::new(w, h);
    for (i, px) in pixels?.iter().enumerate() {
        image.data[i * 3..i * 3 + 3].copy_from_slice(px);
    }
    Ok(image)
}

/// Full in-memory scene: hemisphere cameras with the analytic field rendered
/// into each view.
pub fn generate_scene(spec: &SceneSpec, render_cfg: &RenderConfig) -> Result<Vec<CameraView>> {
    let field = make_synthetic_field(spec)?;
    let mut views = hemisphere_cameras(&spec.camera);
    for view in &mut views {
        view.image = render_analytic(&field, view, render_cfg)?;
    }
    Ok(views)
}

/// Renders the scene and writes `0000.png .. NNNN.png` plus `cameras.json`
/// into `out_dir`.
pub fn render_dataset(spec: &SceneSpec, render_cfg: &RenderConfig, out_dir: &Path) -> Result<()> {
    let views = generate_scene(spec, render_cfg)?;
    crate::io::write_scene(out_dir, &views)
}

/// A seeded random desk-scale scene: one to three primitives with mixed
/// color rules, all inside the unit box.
pub fn random_scene_spec(seed: u64, camera: CameraRing) -> SceneSpec {
    let mut rng = indexed_rng(seed, "scene_spec", 0);
    let n_prims = rng.gen_range(1..=3);
    let mut primitives = Vec::with_capacity(n_prims);
    for _ in 0..n_prims {
        let shape = match rng.gen_range(0..3) {
            0 => PrimitiveShape::Sphere,
            1 => PrimitiveShape::Box,
            _ => PrimitiveShape::Torus,
        };
        let center = [
            rng.gen_range(-0.35..0.35),
            rng.gen_range(-0.35..0.35),
            rng.gen_range(-0.25..0.25),
        ];
        let size = match shape {
            PrimitiveShape::Sphere => [rng.gen_range(0.25..0.45), 0.0, 0.0],
            PrimitiveShape::Box => [
                rng.gen_range(0.15..0.3),
                rng.gen_range(0.15..0.3),
                rng.gen_range(0.15..0.3),
            ],
            PrimitiveShape::Torus => [rng.gen_range(0.25..0.4), rng.gen_range(0.08..0.15), 0.0],
        };
        let color = if rng.gen_bool(0.5) {
            ColorRule::Constant([
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
            ])
        } else {
            ColorRule::PositionGradient
        };
        primitives.push(Primitive {
            shape,
            center,
            size,
            density: rng.gen_range(15.0..40.0),
            color,
            falloff: 0.0,
        });
    }
    SceneSpec {
        primitives,
        camera,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sphere_spec() -> SceneSpec {
        SceneSpec {
            primitives: vec![Primitive {
                shape: PrimitiveShape::Sphere,
                center: [0.0; 3],
                size: [0.5, 0.0, 0.0],
                density: 20.0,
                color: ColorRule::PositionGradient,
                falloff: 0.0,
            }],
            camera: CameraRing {
                n_views: 4,
                resolution: 16,
                ..Default::default()
            },
        }
    }

    #[test]
    fn sphere_interior_and_exterior() {
        let field = make_synthetic_field(&sphere_spec()).unwrap();
        let (sigma, _) = field.query([0.0, 0.0, 0.0]);
        assert_eq!(sigma, 20.0);
        let (sigma, _) = field.query([1.0, 1.0, 1.0]);
        assert_eq!(sigma, 0.0);
    }

    #[test]
    fn position_gradient_color() {
        let field = make_synthetic_field(&sphere_spec()).unwrap();
        let (_, rgb) = field.query([0.5 - 1e-9, 0.0, 0.0]);
        assert_relative_eq!(rgb[0], 0.75, epsilon = 1e-6);
        assert_relative_eq!(rgb[1], 0.5, epsilon = 1e-6);
        assert_relative_eq!(rgb[2], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn oversized_primitives_are_rejected() {
        let mut spec = sphere_spec();
        spec.primitives[0].size[0] = 1.2;
        assert!(spec.validate().is_err());
        spec.primitives[0].size[0] = 0.5;
        spec.primitives[0].density = -1.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn hemisphere_cameras_satisfy_invariants() {
        let ring = CameraRing {
            n_views: 12,
            ..Default::default()
        };
        let cams = hemisphere_cameras(&ring);
        assert_eq!(cams.len(), 12);
        for cam in &cams {
            cam.validate().unwrap();
            let o = cam.translation();
            assert!(o[2] > 0.0);
            let r = (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt();
            assert_relative_eq!(r, ring.radius, epsilon = 1e-9);
        }
    }

    #[test]
    fn scene_generation_is_seed_deterministic() {
        let spec = sphere_spec();
        let cfg = RenderConfig::default();
        let a = generate_scene(&spec, &cfg).unwrap();
        let b = generate_scene(&spec, &cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for (va, vb) in a.iter().zip(&b) {
            assert_eq!(va.image, vb.image);
            assert_eq!(va.cam2world, vb.cam2world);
        }
    }

    #[test]
    fn rendered_views_show_the_object() {
        // Against a white background the sphere must darken some pixels.
        let views = generate_scene(&sphere_spec(), &RenderConfig::default()).unwrap();
        for view in &views {
            assert!(view.image.is_finite_unit());
            assert!(view.image.data.iter().any(|&v| v < 0.9));
        }
    }

    #[test]
    fn torus_and_box_sdfs_have_correct_sign() {
        let b = Primitive {
            shape: PrimitiveShape::Box,
            center: [0.0; 3],
            size: [0.3, 0.2, 0.1],
            density: 1.0,
            color: ColorRule::Constant([1.0; 3]),
            falloff: 0.0,
        };
        assert!(b.sdf([0.0, 0.0, 0.0]) < 0.0);
        assert!(b.sdf([0.31, 0.0, 0.0]) > 0.0);
        assert!(b.sdf([0.0, 0.0, 0.2]) > 0.0);

        let t = Primitive {
            shape: PrimitiveShape::Torus,
            center: [0.0; 3],
            size: [0.4, 0.1, 0.0],
            density: 1.0,
            color: ColorRule::Constant([1.0; 3]),
            falloff: 0.0,
        };
        assert!(t.sdf([0.4, 0.0, 0.0]) < 0.0); // on the ring
        assert!(t.sdf([0.0, 0.0, 0.0]) > 0.0); // hole
        assert!(t.sdf([0.55, 0.0, 0.0]) > 0.0);
    }

    #[test]
    fn smooth_falloff_softens_the_boundary() {
        let mut spec = sphere_spec();
        spec.primitives[0].falloff = 0.05;
        let field = make_synthetic_field(&spec).unwrap();
        let (inside, _) = field.query([0.0, 0.0, 0.0]);
        let (surface, _) = field.query([0.5, 0.0, 0.0]);
        let (outside, _) = field.query([0.7, 0.0, 0.0]);
        assert!(inside > surface && surface > outside);
        assert_relative_eq!(surface, 10.0, epsilon = 1e-9); // half density on the surface
    }
}

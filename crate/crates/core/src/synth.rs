//! Analytic scenes with known albedo and controlled view-dependent shading.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{quantize, Dataset, Image};
use crate::geometry::{ray_from_pixel, sphere_interval, CameraPose, Mat3, Vec3, SCENE_RADIUS};
use crate::mesher::{marching_cubes, Aabb, ColoredMesh, SdfGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Shape {
    Sphere { radius: f64 },
    /// Axis-aligned box with half extents.
    Box { half: [f64; 3] },
    /// Torus around the z axis.
    Torus { major: f64, minor: f64 },
}

impl Shape {
    /// Exact signed distance, negative inside.
    pub fn sdf(&self, p: &Vec3) -> f64 {
        match *self {
            Shape::Sphere { radius } => p.norm() - radius,
            Shape::Box { half } => {
                let q = Vec3::new(p.x.abs() - half[0], p.y.abs() - half[1], p.z.abs() - half[2]);
                let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
                outside + q.x.max(q.y).max(q.z).min(0.0)
            }
            Shape::Torus { major, minor } => {
                let ring = (p.x * p.x + p.y * p.y).sqrt() - major;
                (ring * ring + p.z * p.z).sqrt() - minor
            }
        }
    }

    /// Unit gradient of the SDF by central differences.
    pub fn normal(&self, p: &Vec3) -> Vec3 {
        let h = 1e-6;
        let mut g = Vec3::zeros();
        for k in 0..3 {
            let mut a = *p;
            let mut b = *p;
            a[k] += h;
            b[k] -= h;
            g[k] = self.sdf(&a) - self.sdf(&b);
        }
        g.normalize()
    }

    /// Radius of the smallest centered ball containing the shape.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Sphere { radius } => radius,
            Shape::Box { half } => Vec3::from(half).norm(),
            Shape::Torus { major, minor } => major + minor,
        }
    }
}

const PALETTE: [[f64; 3]; 8] = [
    [0.75, 0.20, 0.20],
    [0.20, 0.65, 0.25],
    [0.20, 0.30, 0.75],
    [0.75, 0.70, 0.20],
    [0.70, 0.25, 0.70],
    [0.20, 0.70, 0.70],
    [0.60, 0.45, 0.25],
    [0.30, 0.30, 0.30],
];

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Albedo {
    Constant { rgb: [f64; 3] },
    /// One palette color per octant.
    OctantChecker,
    /// Two colors alternating over `bands` latitude bands.
    LatitudeStripes { bands: usize },
}

impl Albedo {
    pub fn eval(&self, p: &Vec3) -> [f64; 3] {
        match *self {
            Albedo::Constant { rgb } => rgb,
            Albedo::OctantChecker => {
                let i = (p.x >= 0.0) as usize + 2 * (p.y >= 0.0) as usize + 4 * (p.z >= 0.0) as usize;
                PALETTE[i]
            }
            Albedo::LatitudeStripes { bands } => {
                let n = p.norm().max(1e-12);
                let theta = (p.z / n).clamp(-1.0, 1.0).acos();
                let band = (theta / core::f64::consts::PI * bands as f64) as usize;
                PALETTE[band % 2]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Light {
    /// Light placed at the camera.
    Headlight,
    /// Directional light; `towards` points from the surface to the light.
    Directional { towards: [f64; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Lighting {
    pub ambient: f64,
    pub lambert_strength: f64,
    pub specular_strength: f64,
    pub specular_exponent: f64,
    pub light: Light,
}

impl Default for Lighting {
    fn default() -> Self {
        Self {
            ambient: 1.0,
            lambert_strength: 0.0,
            specular_strength: 0.3,
            specular_exponent: 16.0,
            light: Light::Headlight,
        }
    }
}

impl Lighting {
    /// Shaded color at a surface point with unit normal `n`, seen from
    /// unit direction `view` (surface to camera).
    pub fn shade(&self, albedo: [f64; 3], n: &Vec3, view: &Vec3) -> [f64; 3] {
        let l = match self.light {
            Light::Headlight => *view,
            Light::Directional { towards } => Vec3::from(towards).normalize(),
        };
        let nl = n.dot(&l);
        let diffuse = self.ambient + self.lambert_strength * nl.max(0.0);
        let r = n * (2.0 * nl) - l;
        let spec = if self.specular_strength > 0.0 && nl > 0.0 {
            self.specular_strength * r.dot(view).max(0.0).powf(self.specular_exponent)
        } else {
            0.0
        };
        albedo.map(|a| (a * diffuse + spec).clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct CameraRig {
    /// Training views on a Fibonacci sphere.
    pub count: usize,
    /// Extra held-out views, interleaved on a rotated Fibonacci sphere.
    pub test_count: usize,
    pub orbit_radius: f64,
    pub width: usize,
    pub height: usize,
    pub fov_degrees: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            count: 20,
            test_count: 4,
            orbit_radius: 2.5,
            width: 64,
            height: 64,
            fov_degrees: 32.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SceneSpec {
    pub shape: Shape,
    pub albedo: Albedo,
    pub lighting: Lighting,
    pub cameras: CameraRig,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            shape: Shape::Sphere { radius: 0.5 },
            albedo: Albedo::OctantChecker,
            lighting: Lighting::default(),
            cameras: CameraRig::default(),
            noise: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    Invalid(alloc::string::String),
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Invalid(m.into()));
        if self.shape.bounding_radius() >= SCENE_RADIUS {
            return bad("shape must lie inside the unit sphere");
        }
        if self.cameras.orbit_radius <= SCENE_RADIUS {
            return bad("camera orbit must be outside the unit sphere");
        }
        if self.lighting.specular_strength < 0.0 {
            return bad("specular_strength must be non-negative");
        }
        if self.cameras.count == 0 || self.cameras.width == 0 || self.cameras.height == 0 {
            return bad("need at least one camera and a non-empty image");
        }
        if !(self.cameras.fov_degrees > 0.0 && self.cameras.fov_degrees < 180.0) {
            return bad("fov_degrees must be in (0, 180)");
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Mat3 {
        let c = &self.cameras;
        let f = 0.5 * c.width as f64 / (0.5 * c.fov_degrees.to_radians()).tan();
        Mat3::new(f, 0.0, 0.5 * c.width as f64, 0.0, f, 0.5 * c.height as f64, 0.0, 0.0, 1.0)
    }

    fn rig_poses(&self, n: usize, phase: f64) -> Vec<CameraPose> {
        let k = self.intrinsics();
        fibonacci_sphere(n, phase)
            .into_iter()
            .map(|d| look_at(&(d * self.cameras.orbit_radius), &Vec3::zeros(), k))
            .collect()
    }

    pub fn train_poses(&self) -> Vec<CameraPose> {
        self.rig_poses(self.cameras.count, 0.0)
    }

    pub fn test_poses(&self) -> Vec<CameraPose> {
        self.rig_poses(self.cameras.test_count, 1.0)
    }
}

/// `n` near-uniform unit vectors; `phase` rotates the spiral about z.
pub fn fibonacci_sphere(n: usize, phase: f64) -> Vec<Vec3> {
    let golden = core::f64::consts::PI * (3.0 - 5.0.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64 + phase;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// World-to-camera pose looking from `eye` at `target` (x right, y down, z forward).
pub fn look_at(eye: &Vec3, target: &Vec3, intrinsics: Mat3) -> CameraPose {
    let f = (target - eye).normalize();
    let mut up = Vec3::new(0.0, 0.0, 1.0);
    if f.cross(&up).norm() < 1e-3 {
        up = Vec3::new(0.0, 1.0, 0.0);
    }
    let right = f.cross(&up).normalize();
    let down = f.cross(&right);
    let rot = Mat3::from_rows(&[right.transpose(), down.transpose(), f.transpose()]);
    CameraPose::from_rotation(&rot, -(rot * eye), intrinsics)
}

/// First hit of a ray on the shape by sphere tracing.
pub fn trace(shape: &Shape, origin: &Vec3, dir: &Vec3) -> Option<Vec3> {
    let (mut t, far) = sphere_interval(origin, dir, SCENE_RADIUS)?;
    for _ in 0..512 {
        let p = origin + dir * t;
        let s = shape.sdf(&p);
        if s < 1e-9 {
            return Some(p);
        }
        t += s;
        if t > far {
            return None;
        }
    }
    None
}

/// Shaded image and exact silhouette mask for one camera.
pub fn render_synthetic(spec: &SceneSpec, pose: &CameraPose) -> (Vec<[f64; 3]>, Vec<bool>) {
    let (w, h) = (spec.cameras.width, spec.cameras.height);
    let mut img = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let ray = ray_from_pixel(pose, [x as f64 + 0.5, y as f64 + 0.5], 0.0, 1.0).expect("valid camera");
            match trace(&spec.shape, &ray.origin, &ray.direction) {
                Some(p) => {
                    let n = spec.shape.normal(&p);
                    img.push(spec.lighting.shade(spec.albedo.eval(&p), &n, &(-ray.direction)));
                    mask.push(true);
                }
                None => {
                    img.push([0.0; 3]);
                    mask.push(false);
                }
            }
        }
    }
    (img, mask)
}

/// Rendered training and held-out views plus the ground-truth colored mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub spec: SceneSpec,
    pub train: Dataset,
    pub test: Dataset,
    pub gt_mesh: ColoredMesh,
}

/// Marching-cubes resolution of the ground-truth mesh.
pub const GT_MESH_RESOLUTION: usize = 128;

pub fn generate(spec: &SceneSpec) -> Result<SynthDataset, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| SynthError::Invalid(format!("{e}")))?;
    let mut build = |poses: Vec<CameraPose>, prefix: &str| {
        let mut ds = Dataset::default();
        for (i, pose) in poses.into_iter().enumerate() {
            let (img, mask) = render_synthetic(spec, &pose);
            let pixels = img
                .iter()
                .map(|c| {
                    c.map(|v| {
                        let n = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                        quantize(v + n)
                    })
                })
                .collect();
            ds.names.push(format!("{prefix}{i:03}.png"));
            ds.images.push(Image {
                width: spec.cameras.width,
                height: spec.cameras.height,
                pixels,
                mask: Some(mask),
            });
            ds.poses.push(pose);
        }
        ds
    };
    let train = build(spec.train_poses(), "");
    let test = build(spec.test_poses(), "test_");
    Ok(SynthDataset {
        spec: *spec,
        train,
        test,
        gt_mesh: gt_mesh(spec, GT_MESH_RESOLUTION),
    })
}

/// Marching cubes on the analytic SDF, colored with the albedo.
pub fn gt_mesh(spec: &SceneSpec, resolution: usize) -> ColoredMesh {
    let grid = SdfGrid::sample(resolution, Aabb::UNIT, |pts| {
        pts.iter().map(|p| spec.shape.sdf(&Vec3::from(*p))).collect()
    });
    let mesh = marching_cubes(&grid, 0.0);
    let colors = mesh.vertices.iter().map(|v| spec.albedo.eval(&Vec3::from(*v))).collect();
    ColoredMesh {
        vertices: mesh.vertices,
        triangles: mesh.triangles,
        colors,
    }
}

//! Rays, pinhole cameras, the 6D rotation parameterization, positional
//! encoding and the logistic squashing pair.
//!
//! Cameras follow the OpenCV convention: `x_cam = R · x_world + t`, the
//! camera looks down `+z`, and a pixel is `K · x_cam / z_cam`. Pixel
//! coordinates are continuous; the center of pixel `(col, row)` is
//! `(col + 0.5, row + 0.5)`.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};
use num_traits::Float;

use crate::nn::Real;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Clamp margin applied before [`inverse_sigmoid`].
pub const SIGMOID_EPS: f64 = 1e-6;

/// Radius of the sphere the scene of interest is normalized into.
pub const SCENE_RADIUS: f64 = 1.0;

/// Rays that miss the scene sphere but hit this dilation still get sampled.
pub const DILATED_SCENE_RADIUS: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum GeometryError {
    #[error("degenerate 6D rotation: {0}")]
    DegenerateRotation(&'static str),
    #[error("camera intrinsics are not invertible")]
    SingularIntrinsics,
    #[error("ray interval is invalid (near must satisfy 0 <= near < far)")]
    InvalidInterval,
}

/// `p(z) = origin + z · direction` for `z ∈ [near, far]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, near: f64, far: f64) -> Result<Self, GeometryError> {
        if !(near >= 0.0 && near < far) {
            return Err(GeometryError::InvalidInterval);
        }
        Ok(Self {
            origin,
            direction: direction.normalize(),
            near,
            far,
        })
    }

    #[inline]
    pub fn at(&self, z: f64) -> Vec3 {
        self.origin + self.direction * z
    }
}

/// Pinhole camera with a 6D-parameterized world-to-camera rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CameraPose {
    pub rot6d: [f64; 6],
    pub translation: Vec3,
    pub intrinsics: Mat3,
}

impl CameraPose {
    pub fn from_rotation(rotation: &Mat3, translation: Vec3, intrinsics: Mat3) -> Self {
        Self {
            rot6d: matrix_to_rot6d(rotation),
            translation,
            intrinsics,
        }
    }

    pub fn rotation(&self) -> Result<Mat3, GeometryError> {
        rot6d_to_matrix(&self.rot6d)
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Result<Vec3, GeometryError> {
        Ok(-(self.rotation()?.transpose() * self.translation))
    }

    /// Projects a world point to continuous pixel coordinates.
    pub fn project(&self, p: &Vec3) -> Result<[f64; 2], GeometryError> {
        let cam = self.rotation()? * p + self.translation;
        let h = self.intrinsics * cam;
        Ok([h.x / h.z, h.y / h.z])
    }
}

fn normalize_checked(v: &Vec3, what: &'static str) -> Result<(Vec3, f64), GeometryError> {
    let n = v.norm();
    if !(n > 1e-12) || !n.is_finite() {
        return Err(GeometryError::DegenerateRotation(what));
    }
    Ok((v / n, n))
}

/// Gram–Schmidt of the two 3-vectors in `r`; the third column is their cross
/// product. The result is a proper rotation.
pub fn rot6d_to_matrix(r: &[f64; 6]) -> Result<Mat3, GeometryError> {
    let a1 = Vec3::new(r[0], r[1], r[2]);
    let a2 = Vec3::new(r[3], r[4], r[5]);
    let (b1, _) = normalize_checked(&a1, "first vector is zero")?;
    let u2 = a2 - b1 * b1.dot(&a2);
    if u2.norm() <= 1e-9 * a2.norm().max(1e-300) {
        return Err(GeometryError::DegenerateRotation("vectors are parallel"));
    }
    let (b2, _) = normalize_checked(&u2, "second vector is zero")?;
    let b3 = b1.cross(&b2);
    Ok(Mat3::from_columns(&[b1, b2, b3]))
}

/// First two columns of a rotation matrix.
pub fn matrix_to_rot6d(m: &Mat3) -> [f64; 6] {
    [
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ]
}

/// Vector–Jacobian product of [`rot6d_to_matrix`]: maps `dL/dR` to `dL/dr`.
pub fn rot6d_backward(r: &[f64; 6], d_rot: &Mat3) -> Result<[f64; 6], GeometryError> {
    let a1 = Vec3::new(r[0], r[1], r[2]);
    let a2 = Vec3::new(r[3], r[4], r[5]);
    let (b1, n1) = normalize_checked(&a1, "first vector is zero")?;
    let u2 = a2 - b1 * b1.dot(&a2);
    let (b2, n2) = normalize_checked(&u2, "second vector is zero")?;
    let g1: Vec3 = d_rot.column(0).into();
    let g2: Vec3 = d_rot.column(1).into();
    let g3: Vec3 = d_rot.column(2).into();
    // b3 = b1 × b2
    let mut gb1 = g1 + b2.cross(&g3);
    let gb2 = g2 + g3.cross(&b1);
    // b2 = u2 / |u2|
    let gu2 = (gb2 - b2 * b2.dot(&gb2)) / n2;
    // u2 = a2 - (b1·a2) b1
    let ga2 = gu2 - b1 * b1.dot(&gu2);
    gb1 -= gu2 * b1.dot(&a2) + a2 * b1.dot(&gu2);
    // b1 = a1 / |a1|
    let ga1 = (gb1 - b1 * b1.dot(&gb1)) / n1;
    Ok([ga1.x, ga1.y, ga1.z, ga2.x, ga2.y, ga2.z])
}

/// Back-projects a pixel into a world-space ray.
pub fn ray_from_pixel(
    pose: &CameraPose,
    pixel: [f64; 2],
    near: f64,
    far: f64,
) -> Result<Ray, GeometryError> {
    let kinv = pose
        .intrinsics
        .try_inverse()
        .ok_or(GeometryError::SingularIntrinsics)?;
    let rot = pose.rotation()?;
    let dir_cam = kinv * Vec3::new(pixel[0], pixel[1], 1.0);
    let origin = -(rot.transpose() * pose.translation);
    Ray::new(origin, rot.transpose() * dir_cam, near, far)
}

/// Gradient of a loss with respect to the pose parameters, given its gradient
/// with respect to the ray origin and (unit) direction.
pub fn ray_from_pixel_backward(
    pose: &CameraPose,
    pixel: [f64; 2],
    d_origin: &Vec3,
    d_direction: &Vec3,
) -> Result<([f64; 6], Vec3), GeometryError> {
    let kinv = pose
        .intrinsics
        .try_inverse()
        .ok_or(GeometryError::SingularIntrinsics)?;
    let rot = pose.rotation()?;
    let x = kinv * Vec3::new(pixel[0], pixel[1], 1.0);
    let raw = rot.transpose() * x;
    let len = raw.norm();
    let dir = raw / len;
    let d_raw = (d_direction - dir * dir.dot(d_direction)) / len;
    // raw_j = Σ_i R_ij x_i ; origin_j = -Σ_i R_ij t_i
    let t = pose.translation;
    let d_rot = x * d_raw.transpose() - t * d_origin.transpose();
    let d_t = -(rot * d_origin);
    Ok((rot6d_backward(&pose.rot6d, &d_rot)?, d_t))
}

/// Entry/exit distances of a ray against a centered sphere, with `near`
/// clamped to zero when the origin is inside.
pub fn sphere_interval(origin: &Vec3, direction: &Vec3, radius: f64) -> Option<(f64, f64)> {
    let b = origin.dot(direction);
    let c = origin.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc <= 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let far = -b + s;
    if far <= 0.0 {
        return None;
    }
    Some(((-b - s).max(0.0), far))
}

/// The sampling interval for a ray: the unit scene sphere, or the dilated
/// sphere for rays that graze it; `None` if both are missed.
pub fn scene_interval(origin: &Vec3, direction: &Vec3) -> Option<(f64, f64)> {
    sphere_interval(origin, direction, SCENE_RADIUS)
        .or_else(|| sphere_interval(origin, direction, DILATED_SCENE_RADIUS))
}

/// Frequency count and passthrough flag of a NeRF-style positional encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EncodingSpec {
    pub num_frequencies: usize,
    pub include_input: bool,
}

impl EncodingSpec {
    pub fn output_dim(&self, input_dim: usize) -> usize {
        input_dim * usize::from(self.include_input) + input_dim * 2 * self.num_frequencies
    }

    /// Writes `[x?, sin(2^0 π x), cos(2^0 π x), ..., sin(2^{L-1} π x), cos(...)]`
    /// into `out`.
    pub fn encode_into<T: Real>(&self, x: &[T], out: &mut [T]) {
        let n = x.len();
        assert_eq!(out.len(), self.output_dim(n));
        let mut o = 0;
        if self.include_input {
            out[..n].copy_from_slice(x);
            o = n;
        }
        let mut freq = T::PI();
        for _ in 0..self.num_frequencies {
            for i in 0..n {
                let (s, c) = (x[i] * freq).sin_cos();
                out[o + i] = s;
                out[o + n + i] = c;
            }
            o += 2 * n;
            freq = freq + freq;
        }
    }

    /// Encodes `x` and writes the Jacobian column for each input coordinate:
    /// `jac[k]` is `∂γ/∂x_k`.
    pub fn encode_with_jacobian<T: Real>(&self, x: &[T], out: &mut [T], jac: &mut [&mut [T]]) {
        let n = x.len();
        self.encode_into(x, out);
        assert_eq!(jac.len(), n);
        for col in jac.iter_mut() {
            col.iter_mut().for_each(|v| *v = T::zero());
        }
        let mut o = 0;
        if self.include_input {
            for k in 0..n {
                jac[k][k] = T::one();
            }
            o = n;
        }
        let mut freq = T::PI();
        for _ in 0..self.num_frequencies {
            for k in 0..n {
                let (s, c) = (x[k] * freq).sin_cos();
                jac[k][o + k] = freq * c;
                jac[k][o + n + k] = -freq * s;
            }
            o += 2 * n;
            freq = freq + freq;
        }
    }

    /// Gradient with respect to `x` of `Σ dγ·γ(x) + Σ_k dJ_k·∂γ/∂x_k`.
    pub fn backward<T: Real>(&self, x: &[T], d_out: &[T], d_jac: &[&[T]]) -> Vec<T> {
        let n = x.len();
        let mut dx = alloc::vec![T::zero(); n];
        let mut o = 0;
        if self.include_input {
            for k in 0..n {
                dx[k] += d_out[k];
            }
            o = n;
        }
        let mut freq = T::PI();
        for _ in 0..self.num_frequencies {
            for k in 0..n {
                let (s, c) = (x[k] * freq).sin_cos();
                dx[k] += d_out[o + k] * freq * c - d_out[o + n + k] * freq * s;
                if let Some(dj) = d_jac.get(k) {
                    let f2 = freq * freq;
                    dx[k] += -dj[o + k] * f2 * s - dj[o + n + k] * f2 * c;
                }
            }
            o += 2 * n;
            freq = freq + freq;
        }
        dx
    }
}

/// Convenience wrapper around [`EncodingSpec::encode_into`].
pub fn positional_encode(x: &[f64], spec: &EncodingSpec) -> Vec<f64> {
    let mut out = alloc::vec![0.0; spec.output_dim(x.len())];
    spec.encode_into(x, &mut out);
    out
}

/// Logistic function Ψ.
#[inline]
pub fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Ψ⁻¹, clamping its argument to `[ε, 1 - ε]` first.
#[inline]
pub fn inverse_sigmoid<T: Float>(y: T) -> T {
    let eps = T::from(SIGMOID_EPS).expect("representable");
    let y = y.max(eps).min(T::one() - eps);
    (y / (T::one() - y)).ln()
}

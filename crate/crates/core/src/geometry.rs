//! Vectors, rays, pinhole cameras, and the closed-form minimum distance
//! between two rays.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Denominator threshold below which two ray directions are treated as parallel.
pub const PARALLEL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn splat(v: f64) -> Self {
        Vec3::new(v, v, v)
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self / self.norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn min_component(self) -> f64 {
        self.x.min(self.y).min(self.z)
    }

    pub fn max_component(self) -> f64 {
        self.x.max(self.y).max(self.z)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3x3 matrix, used for camera-to-world rotations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat3 {
    pub rows: [[f64; 3]; 3],
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3 {
        rows: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    pub fn from_rows(r0: [f64; 3], r1: [f64; 3], r2: [f64; 3]) -> Self {
        Mat3 { rows: [r0, r1, r2] }
    }

    /// Build a matrix whose columns are the given vectors.
    pub fn from_cols(c0: Vec3, c1: Vec3, c2: Vec3) -> Self {
        Mat3 {
            rows: [
                [c0.x, c1.x, c2.x],
                [c0.y, c1.y, c2.y],
                [c0.z, c1.z, c2.z],
            ],
        }
    }

    pub fn col(&self, j: usize) -> Vec3 {
        Vec3::new(self.rows[0][j], self.rows[1][j], self.rows[2][j])
    }

    pub fn transpose(&self) -> Mat3 {
        let r = &self.rows;
        Mat3::from_rows(
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        )
    }

    pub fn det(&self) -> f64 {
        let r = &self.rows;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    /// True when the matrix is orthonormal with determinant +1 (within `tol`).
    pub fn is_rotation(&self, tol: f64) -> bool {
        let t = self.transpose();
        let p = *self * t;
        let mut max_dev: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                max_dev = max_dev.max((p.rows[i][j] - expect).abs());
            }
        }
        max_dev <= tol && (self.det() - 1.0).abs() <= tol
    }
}

impl Mul<Vec3> for Mat3 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        let r = &self.rows;
        Vec3::new(
            r[0][0] * v.x + r[0][1] * v.y + r[0][2] * v.z,
            r[1][0] * v.x + r[1][1] * v.y + r[1][2] * v.z,
            r[2][0] * v.x + r[2][1] * v.y + r[2][2] * v.z,
        )
    }
}

impl Mul<Mat3> for Mat3 {
    type Output = Mat3;
    fn mul(self, o: Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.rows[i][k] * o.rows[k][j]).sum();
            }
        }
        Mat3 { rows: out }
    }
}

/// A ray with unit-length direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Construct a ray, normalizing the direction.
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Ray {
            origin,
            direction: direction.normalized(),
        }
    }
}

/// The point at distance `t` along the ray: `o + t d`.
pub fn point_at(r: &Ray, t: f64) -> Vec3 {
    r.origin + r.direction * t
}

/// Pinhole camera intrinsics in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64)
            || !(self.cy >= 0.0 && self.cy < self.height as f64)
        {
            return Err(Error::InvalidInput(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Camera-to-world pose. `rotation` columns are the camera axes expressed in
/// world coordinates; `translation` is the camera center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl CameraPose {
    pub const IDENTITY: CameraPose = CameraPose {
        rotation: Mat3::IDENTITY,
        translation: Vec3::ZERO,
    };

    /// Pose at `eye` looking toward `target`. The camera convention is
    /// +x right, +y down, +z forward, so image rows increase downward
    /// when `up` points world-up.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let forward = (target - eye).normalized();
        let right = forward.cross(up).normalized();
        let down = forward.cross(right);
        CameraPose {
            rotation: Mat3::from_cols(right, down, forward),
            translation: eye,
        }
    }
}

/// Back-project the pixel-centered ray for continuous pixel coordinates
/// (`u`, `v`). The ray passes through image-plane point
/// `((u + 0.5 - cx) / fx, (v + 0.5 - cy) / fy, 1)` in camera coordinates.
pub fn generate_ray(intr: &CameraIntrinsics, pose: &CameraPose, pixel: (f64, f64)) -> Result<Ray> {
    let (u, v) = pixel;
    if !(u >= 0.0 && u < intr.width as f64 && v >= 0.0 && v < intr.height as f64) {
        return Err(Error::PixelOutOfBounds {
            u,
            v,
            width: intr.width,
            height: intr.height,
        });
    }
    let dir_cam = Vec3::new(
        (u + 0.5 - intr.cx) / intr.fx,
        (v + 0.5 - intr.cy) / intr.fy,
        1.0,
    );
    let dir_world = pose.rotation * dir_cam;
    Ok(Ray::new(pose.translation, dir_world))
}

/// Project a world-space point into continuous pixel coordinates, the exact
/// inverse of [`generate_ray`]. Returns `None` for points at or behind the
/// camera plane.
pub fn project(intr: &CameraIntrinsics, pose: &CameraPose, point: Vec3) -> Option<(f64, f64)> {
    let cam = pose.rotation.transpose() * (point - pose.translation);
    if cam.z <= 1e-9 {
        return None;
    }
    let u = intr.fx * cam.x / cam.z + intr.cx - 0.5;
    let v = intr.fy * cam.y / cam.z + intr.cy - 0.5;
    Some((u, v))
}

/// Signed distances along each ray to the closest-approach points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestParams {
    /// Distance along ray 1 to its closest point.
    pub m: f64,
    /// Distance along ray 2 to its closest point.
    pub n: f64,
    /// Set when the directions are (near-)parallel and `(m, n)` is not unique.
    pub degenerate: bool,
}

/// Closest-approach parameters between two rays.
///
/// Solves the perpendicularity conditions `d1 . (P1 - P2) = 0` and
/// `d2 . (P1 - P2) = 0` for `P1 = o1 + m d1`, `P2 = o2 + n d2`:
///
/// ```text
/// m = (be + cf - cg - bd) / (ab - c^2)
/// n = (ce + af - cd - ag) / (ab - c^2)
/// ```
///
/// with `a = d1.d1`, `b = d2.d2`, `c = d1.d2`, `d = d1.o1`, `e = d1.o2`,
/// `f = d2.o1`, `g = d2.o2`. The dot products `a` and `b` are kept in the
/// formula even though directions are unit length, so the solution stays
/// valid if normalization drifts. When `|ab - c^2| < PARALLEL_EPS` the rays
/// are parallel, `(m, n)` is not unique, and `degenerate` is set with
/// `m = n = 0`.
pub fn closest_params(r1: &Ray, r2: &Ray) -> ClosestParams {
    let (d1, d2) = (r1.direction, r2.direction);
    let a = d1.dot(d1);
    let b = d2.dot(d2);
    let c = d1.dot(d2);
    let d = d1.dot(r1.origin);
    let e = d1.dot(r2.origin);
    let f = d2.dot(r1.origin);
    let g = d2.dot(r2.origin);

    let denom = a * b - c * c;
    if denom.abs() < PARALLEL_EPS {
        return ClosestParams {
            m: 0.0,
            n: 0.0,
            degenerate: true,
        };
    }
    ClosestParams {
        m: (b * e + c * f - c * g - b * d) / denom,
        n: (c * e + a * f - c * d - a * g) / denom,
        degenerate: false,
    }
}

/// Minimum distance between two rays (as infinite lines):
/// `|o1 - o2 + m d1 - n d2|` with `(m, n)` from [`closest_params`].
///
/// For parallel (degenerate) rays this is the perpendicular distance from
/// `o1` to the second line, which remains well-defined.
pub fn ray_min_distance(r1: &Ray, r2: &Ray) -> f64 {
    let params = closest_params(r1, r2);
    if params.degenerate {
        let rel = r1.origin - r2.origin;
        let along = rel.dot(r2.direction) / r2.direction.norm_squared();
        return (rel - r2.direction * along).norm();
    }
    (r1.origin - r2.origin + r1.direction * params.m - r2.direction * params.n).norm()
}

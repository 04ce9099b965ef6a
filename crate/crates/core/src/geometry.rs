//! Geometric primitives shared by every stage of the pipeline.
//!
//! Frame conventions:
//! - world: right-handed, z up, the ground plane is z = 0;
//! - camera: optical frame, x right, y down, z forward along the optical axis;
//! - [`Pose`] maps camera coordinates into world coordinates (camera-to-world).
//!
//! Pixel coordinates are continuous; integer coordinates are pixel centers and
//! the image covers `[0, width) x [0, height)`.

use std::ops::{Add, Div, Mul, Neg, Sub};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn dot(&self, other: &Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    #[inline]
    pub fn distance_squared(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    #[inline]
    pub fn distance(&self, other: &Point3) -> f64 {
        self.distance_squared(other).sqrt()
    }

    /// Distance in the world x-y plane.
    #[inline]
    pub fn planar_distance(&self, other: &Point3) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    /// Arithmetic mean of a non-empty set of points. Returns `None` for an empty set.
    pub fn centroid<'a, I>(points: I) -> Option<Point3>
    where
        I: IntoIterator<Item = &'a Point3>,
    {
        let mut sum = Point3::ORIGIN;
        let mut n = 0usize;
        for p in points {
            sum = sum + *p;
            n += 1;
        }
        (n > 0).then(|| sum / n as f64)
    }
}

impl Add for Point3 {
    type Output = Point3;
    #[inline]
    fn add(self, rhs: Point3) -> Point3 {
        Point3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    #[inline]
    fn sub(self, rhs: Point3) -> Point3 {
        Point3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    #[inline]
    fn mul(self, rhs: f64) -> Point3 {
        Point3::new(self.x * rhs, self.y * rhs, self.z * rhs)
    }
}

impl Div<f64> for Point3 {
    type Output = Point3;
    #[inline]
    fn div(self, rhs: f64) -> Point3 {
        Point3::new(self.x / rhs, self.y / rhs, self.z / rhs)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    #[inline]
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

/// Continuous image-plane coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    /// Index of the pixel containing this coordinate. Pixel `(i, j)` covers
    /// `[i, i + 1) x [j, j + 1)`; its center is at `(i + 0.5, j + 0.5)`.
    #[inline]
    pub fn index(&self) -> (i64, i64) {
        (self.u.floor() as i64, self.v.floor() as i64)
    }
}

/// Rigid transform, camera-to-world. Rotation is a Hamilton unit quaternion
/// stored and serialized as `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    /// Builds a pose from a translation and a `(w, x, y, z)` quaternion.
    ///
    /// The quaternion must be unit length within 1e-6; it is renormalized so the
    /// stored rotation satisfies the 1e-9 norm invariant.
    pub fn from_parts(t: [f64; 3], q: [f64; 4]) -> Result<Self> {
        if !t.iter().chain(q.iter()).all(|v| v.is_finite()) {
            return Err(Error::Config("pose contains non-finite values".into()));
        }
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "pose quaternion is not unit length (norm {norm})"
            )));
        }
        Ok(Self {
            translation: Vector3::new(t[0], t[1], t[2]),
            rotation: UnitQuaternion::new_normalize(quat),
        })
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            translation: Vector3::new(x, y, z),
            rotation: UnitQuaternion::identity(),
        }
    }

    /// Pure rotation about the world z axis followed by a translation.
    pub fn from_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self {
            translation: Vector3::new(x, y, z),
            rotation: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        }
    }

    pub fn translation_array(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    /// Quaternion as `(w, x, y, z)`.
    pub fn quaternion_array(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn inverse(&self) -> Pose {
        let rotation = self.rotation.inverse();
        Pose {
            translation: -(rotation * self.translation),
            rotation,
        }
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            translation: self.rotation * other.translation + self.translation,
            rotation: self.rotation * other.rotation,
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Point3) -> Point3 {
        let v = self.rotation * p.to_vector() + self.translation;
        Point3::from_vector(&v)
    }

    /// Rotates a direction vector without translating it.
    #[inline]
    pub fn rotate(&self, p: &Point3) -> Point3 {
        Point3::from_vector(&(self.rotation * p.to_vector()))
    }

    pub fn position(&self) -> Point3 {
        Point3::from_vector(&self.translation)
    }
}

/// Rotates then translates every point of `cloud`.
pub fn transform_cloud(cloud: &[Point3], pose: &Pose) -> Vec<Point3> {
    let rot = pose.rotation.to_rotation_matrix();
    let m = rot.matrix();
    let t = pose.translation;
    cloud
        .iter()
        .map(|p| {
            Point3::new(
                m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)] * p.z + t.x,
                m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)] * p.z + t.y,
                m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)] * p.z + t.z,
            )
        })
        .collect()
}

/// Pinhole intrinsics. Lens distortion is not modelled; inputs are assumed rectified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid camera model {self:?}")))
        }
    }

    #[inline]
    pub fn contains(&self, px: &Pixel) -> bool {
        px.u >= 0.0 && px.u < self.width as f64 && px.v >= 0.0 && px.v < self.height as f64
    }

    /// Projects a camera-frame point. `None` means out of view: behind the
    /// camera (`z <= 0`) or outside the image.
    #[inline]
    pub fn project(&self, p: &Point3) -> Option<Pixel> {
        if p.z <= 0.0 {
            return None;
        }
        let px = Pixel {
            u: self.fx * p.x / p.z + self.cx,
            v: self.fy * p.y / p.z + self.cy,
        };
        self.contains(&px).then_some(px)
    }

    /// Camera-frame ray direction through pixel `(u, v)`, normalized so that z = 1.
    #[inline]
    pub fn ray_direction(&self, u: f64, v: f64) -> Point3 {
        Point3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Free-function form of [`CameraModel::project`].
pub fn project_to_image(p: &Point3, cam: &CameraModel) -> Option<Pixel> {
    cam.project(p)
}

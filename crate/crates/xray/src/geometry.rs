//! Geometric primitives shared by every other module: points, rigid
//! transforms, oriented boxes, and box membership tests.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("rotation matrix is not orthonormal within 1e-9")]
    NotOrthonormal,
    #[error("rotation matrix determinant is {0}, expected +1")]
    NotProperRotation(f64),
    #[error("box sizes must be positive, got ({0}, {1}, {2})")]
    NonPositiveSize(f64, f64, f64),
    #[error("point coordinates must be finite")]
    NonFinitePoint,
    #[error("intensity {0} outside [0, 1]")]
    IntensityOutOfRange(f64),
}

/// A single LiDAR return: position in meters plus reflectance in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn checked(x: f64, y: f64, z: f64, intensity: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(GeometryError::NonFinitePoint);
        }
        if !(0.0..=1.0).contains(&intensity) {
            return Err(GeometryError::IntensityOutOfRange(intensity));
        }
        Ok(Self { x, y, z, intensity })
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn with_position(&self, p: Vector3<f64>) -> Self {
        Self { x: p.x, y: p.y, z: p.z, intensity: self.intensity }
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        (self.position() - other.position()).norm()
    }
}

/// An ordered list of points. Order is preserved by every pure transform;
/// no operation reorders points implicitly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3> {
        self.points.iter()
    }

    pub fn extend(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
    }
}

impl FromIterator<Point3> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Point3>>(iter: I) -> Self {
        Self { points: iter.into_iter().collect() }
    }
}

/// A proper rigid motion of 3-space. The rotation is stored as a unit
/// quaternion so that serialized poses round-trip exactly; the matrix view
/// is available through [`RigidTransform::rotation_matrix`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    /// Unit quaternion, scalar-first (w, x, y, z) when serialized.
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn from_parts(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Builds from an explicit 3x3 matrix, validating orthonormality and
    /// det = +1 to 1e-9 per entry.
    pub fn from_matrix(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let gram = rotation.transpose() * rotation;
        let eye: Matrix3<f64> = Matrix3::identity();
        for i in 0..3 {
            for j in 0..3 {
                if (gram[(i, j)] - eye[(i, j)]).abs() > 1e-9 {
                    return Err(GeometryError::NotOrthonormal);
                }
            }
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(GeometryError::NotProperRotation(det));
        }
        let q = UnitQuaternion::from_matrix(&rotation);
        Ok(Self { rotation: q, translation })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: UnitQuaternion::identity(), translation }
    }

    /// Rotation about +z by `yaw` radians, then translate.
    pub fn from_yaw_translation(yaw: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
            translation,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn apply_point(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let inv_rot = self.rotation.inverse();
        Self { rotation: inv_rot, translation: -(inv_rot * self.translation) }
    }

    /// Yaw component of the rotation, i.e. the heading of the rotated x-axis.
    pub fn yaw(&self) -> f64 {
        let m = self.rotation_matrix();
        m[(1, 0)].atan2(m[(0, 0)])
    }

    /// Unit quaternion as (w, x, y, z).
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn from_quaternion_wxyz(
        wxyz: [f64; 4],
        translation: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(GeometryError::NotOrthonormal);
        }
        Ok(Self {
            rotation: UnitQuaternion::new_unchecked(q),
            translation,
        })
    }
}

/// Normalizes an angle into [-pi, pi).
pub fn normalize_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if r >= std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// An oriented box: center, extents (length, width, height), and a single
/// yaw degree of freedom about +z. Yaw is normalized to [-pi, pi) at
/// construction so equal boxes compare equal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox3D {
    pub center: Vector3<f64>,
    /// (length, width, height) along the box's local x, y, z axes.
    pub size: (f64, f64, f64),
    pub yaw: f64,
}

impl BoundingBox3D {
    pub fn new(
        center: Vector3<f64>,
        size: (f64, f64, f64),
        yaw: f64,
    ) -> Result<Self, GeometryError> {
        let (l, w, h) = size;
        if !(l > 0.0 && w > 0.0 && h > 0.0) {
            return Err(GeometryError::NonPositiveSize(l, w, h));
        }
        Ok(Self { center, size, yaw: normalize_angle(yaw) })
    }

    /// max(length, width, height)
    pub fn max_dimension(&self) -> f64 {
        let (l, w, h) = self.size;
        l.max(w).max(h)
    }

    /// Maps a global point into the box's local frame (center at origin,
    /// yaw removed).
    pub fn to_local(&self, p: Vector3<f64>) -> Vector3<f64> {
        let d = p - self.center;
        let (s, c) = (-self.yaw).sin_cos();
        Vector3::new(c * d.x - s * d.y, s * d.x + c * d.y, d.z)
    }

    /// Boundary-inclusive containment test.
    pub fn contains(&self, p: Vector3<f64>) -> bool {
        let local = self.to_local(p);
        let (l, w, h) = self.size;
        local.x.abs() <= l / 2.0 && local.y.abs() <= w / 2.0 && local.z.abs() <= h / 2.0
    }

    /// Transform mapping the box's local frame into the global frame.
    pub fn pose(&self) -> RigidTransform {
        RigidTransform::from_yaw_translation(self.yaw, self.center)
    }
}

/// Applies a rigid transform to every point, preserving intensity and order.
pub fn apply_transform(t: &RigidTransform, pc: &PointCloud) -> PointCloud {
    pc.iter().map(|p| p.with_position(t.apply_point(p.position()))).collect()
}

/// Composition such that applying the result equals applying `b` then `a`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    RigidTransform {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

/// Indices of the points of `pc` inside `bbox` (boundary inclusive).
pub fn points_in_box(bbox: &BoundingBox3D, pc: &PointCloud) -> Vec<usize> {
    pc.iter()
        .enumerate()
        .filter(|(_, p)| bbox.contains(p.position()))
        .map(|(i, _)| i)
        .collect()
}

/// max(length, width, height) of the box.
pub fn box_max_dimension(bbox: &BoundingBox3D) -> f64 {
    bbox.max_dimension()
}

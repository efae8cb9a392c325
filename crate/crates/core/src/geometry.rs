//! Rigid transforms, pose error metrics and the pinhole camera model.
//!
//! Camera frames use +z forward, +x right, +y down. The world frame is
//! z-up with the floor at z = 0. Poses stored on frames are camera-to-world.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};

/// Rotation as a unit quaternion, kept in the `w >= 0` hemisphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes and canonicalizes. Panics on a zero or non-finite input.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n2 = w * w + x * x + y * y + z * z;
        // inputs that are already unit (e.g. read back from a file) are kept
        // bit-exact instead of being nudged by an ulp
        let n = if (n2 - 1.0).abs() <= 4.0 * f64::EPSILON { 1.0 } else { n2.sqrt() };
        assert!(
            n.is_finite() && n > 0.0,
            "quaternion must have finite nonzero norm"
        );
        // w >= 0; on the w = 0 great circle the first nonzero component decides
        let lead = [w, x, y, z].into_iter().find(|v| *v != 0.0).unwrap_or(1.0);
        let s = if lead < 0.0 { -1.0 / n } else { 1.0 / n };
        UnitQuaternion {
            w: w * s,
            x: x * s,
            y: y * s,
            z: z * s,
        }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let axis = axis.normalize();
        let (s, c) = (angle / 2.0).sin_cos();
        Self::new(c, axis.x * s, axis.y * s, axis.z * s)
    }

    /// Converts an orthonormal matrix (Shepperd's method).
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Self::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Self::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Self::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Self::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        }
    }

    /// Upright camera looking along world heading `yaw` (radians, CCW from +x).
    pub fn camera_yaw(yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        // columns: camera x (right), y (down), z (forward) in world coordinates
        let m = Matrix3::new(s, 0.0, c, -c, 0.0, s, 0.0, -1.0, 0.0);
        Self::from_matrix(&m)
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn conjugate(&self) -> Self {
        if self.w > 0.0 {
            UnitQuaternion {
                w: self.w,
                x: -self.x,
                y: -self.y,
                z: -self.z,
            }
        } else {
            Self::new(self.w, -self.x, -self.y, -self.z)
        }
    }

    /// Hamilton product `self * rhs`, renormalized.
    pub fn mul(&self, rhs: &UnitQuaternion) -> Self {
        let (a, b) = (self, rhs);
        Self::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.to_matrix() * v
    }

    /// Rotation angle in radians, in [0, pi].
    pub fn angle(&self) -> f64 {
        let v = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        2.0 * v.atan2(self.w.abs())
    }
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// SE(3) rigid transform `x -> R x + t` (meters).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub rotation: UnitQuaternion,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(rotation: UnitQuaternion, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose::new(UnitQuaternion::IDENTITY, t)
    }

    /// Builds a pose from a rotation matrix, which is re-orthonormalized
    /// through the quaternion.
    pub fn from_rotation_matrix(r: &Matrix3<f64>, t: Vector3<f64>) -> Self {
        Pose::new(UnitQuaternion::from_matrix(r), t)
    }

    /// Upright camera at `position` looking along heading `yaw` (radians).
    pub fn camera_at(position: Vector3<f64>, yaw: f64) -> Self {
        Pose::new(UnitQuaternion::camera_yaw(yaw), position)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_matrix()
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `self * rhs`: applies `rhs` first, then `self`.
    pub fn compose(&self, rhs: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.mul(&rhs.rotation),
            translation: self.rotation.rotate(&rhs.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let r = self.rotation.conjugate();
        Pose {
            rotation: r,
            translation: -r.rotate(&self.translation),
        }
    }

    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(x) + self.translation
    }

    /// Heading of the camera's optical axis projected on the floor plane.
    pub fn camera_yaw(&self) -> f64 {
        let f = self.rotation.rotate(&Vector3::z());
        f.y.atan2(f.x)
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && [self.rotation.w, self.rotation.x, self.rotation.y, self.rotation.z]
                .iter()
                .all(|v| v.is_finite())
    }
}

/// Euclidean distance between the translations, meters.
pub fn translation_error(a: &Pose, b: &Pose) -> f64 {
    (a.translation - b.translation).norm()
}

/// Geodesic angle of the relative rotation, degrees in [0, 180].
///
/// Equal to `2 acos(|<q_a, q_b>|)`, evaluated as `2 atan2(|v|, |w|)` of the
/// relative quaternion to stay accurate near zero.
pub fn rotation_error(a: &Pose, b: &Pose) -> f64 {
    a.rotation.conjugate().mul(&b.rotation).angle().to_degrees()
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = &self.rotation;
        let t = &self.translation;
        write!(
            f,
            "{:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e}",
            t.x, t.y, t.z, q.w, q.x, q.y, q.z
        )
    }
}

impl FromStr for Pose {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let vals = s
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|e| format!("bad number {tok:?}: {e}"))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if vals.len() != 7 {
            return Err(format!("expected 7 values, found {}", vals.len()));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err("non-finite value".into());
        }
        let qn = vals[3..].iter().map(|v| v * v).sum::<f64>();
        if qn < 1e-12 {
            return Err("zero quaternion".into());
        }
        Ok(Pose::new(
            UnitQuaternion::new(vals[3], vals[4], vals[5], vals[6]),
            Vector3::new(vals[0], vals[1], vals[2]),
        ))
    }
}

/// Pinhole intrinsics; pixel (0, 0) is the top-left pixel center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let ok = fx > 0.0
            && fy > 0.0
            && (0.0..width as f64).contains(&cx)
            && (0.0..height as f64).contains(&cy);
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "intrinsics out of range: fx={fx} fy={fy} cx={cx} cy={cy} size={width}x{height}"
            )));
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Square-pixel camera with horizontal field of view `fov_deg`.
    pub fn from_fov(fov_deg: f64, width: u32, height: u32) -> Result<Self> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::InvalidArgument(format!(
                "field of view {fov_deg} outside (0, 180)"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("zero image size".into()));
        }
        let f = (width as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan();
        Self::new(
            f,
            f,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    /// Lifts pixel `(u, v)` with z-depth `depth` into the camera frame.
    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Result<Vector3<f64>> {
        if !(depth > 0.0) {
            return Err(Error::InvalidDepth(depth));
        }
        Ok(Vector3::new(
            depth * (u - self.cx) / self.fx,
            depth * (v - self.cy) / self.fy,
            depth,
        ))
    }

    /// Projects a camera-frame point; `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Unnormalized viewing ray through pixel `(u, v)` with unit z component,
    /// so the ray parameter equals z-depth.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

//! Pinhole cameras with OpenCV axis conventions (x right, y down, z forward).
//!
//! Pixel centers sit at integer coordinates: pixel `(i, j)` covers the screen
//! point `(i, j)`.

use nalgebra::{Isometry3, Matrix3, Point2, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(invalid(format!("invalid intrinsics {self:?}")));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Projects a camera-space point to pixel coordinates.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Point2<f64> {
        Point2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// `K^-1 (x, y, 1)`: the viewing ray through a pixel, scaled to unit depth.
    #[inline]
    pub fn unproject(&self, x: f64, y: f64) -> Vector3<f64> {
        Vector3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0)
    }
}

/// A posed pinhole camera. `rotation`/`translation` map world to camera.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraView {
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraView {
    pub fn new(intrinsics: Intrinsics, width: usize, height: usize, world_to_camera: Isometry3<f64>) -> Self {
        Self {
            intrinsics,
            width,
            height,
            rotation: *world_to_camera.rotation.to_rotation_matrix().matrix(),
            translation: world_to_camera.translation.vector,
        }
    }

    /// Camera at `eye` looking at `target`, with `up` roughly opposite image y.
    pub fn look_at(
        intrinsics: Intrinsics,
        width: usize,
        height: usize,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(invalid("look_at: eye coincides with target"));
        }
        let z = forward.normalize();
        let x = (-up).cross(&z);
        if x.norm() < 1e-9 {
            return Err(invalid("look_at: up vector parallel to viewing direction"));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye);
        Ok(Self {
            intrinsics,
            width,
            height,
            rotation,
            translation,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.width == 0 || self.height == 0 {
            return Err(invalid("camera image size must be positive"));
        }
        let r = &self.rotation;
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !err.is_finite() || err > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(invalid("camera rotation is not a proper rotation"));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(invalid("camera translation is not finite"));
        }
        Ok(())
    }

    pub fn world_to_camera(&self) -> Isometry3<f64> {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        Isometry3::from_parts(
            Translation3::from(self.translation),
            UnitQuaternion::from_rotation_matrix(&rot),
        )
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    #[inline]
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Returns `None` for points at or behind the camera plane.
    pub fn project_world(&self, p: &Vector3<f64>) -> Option<(Point2<f64>, f64)> {
        let c = self.to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        Some((self.intrinsics.project(&c), c.z))
    }

    /// Same intrinsics and image size, different extrinsics.
    pub fn with_pose(&self, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
            ..self.clone()
        }
    }

    /// Composes a camera-frame rigid motion: the new camera maps world points
    /// `x` to `motion * (R x + t)`.
    pub fn moved(&self, motion: &Isometry3<f64>) -> Self {
        let r = *motion.rotation.to_rotation_matrix().matrix();
        let t = motion.translation.vector;
        self.with_pose(r * self.rotation, r * self.translation + t)
    }
}

/// A rigid transform `x -> R x + t` kept as a rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self::new(*iso.rotation.to_rotation_matrix().matrix(), iso.translation.vector)
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        Isometry3::from_parts(
            Translation3::from(self.translation),
            UnitQuaternion::from_rotation_matrix(&rot),
        )
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &RigidPose) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    /// Geodesic angle between the rotations, radians.
    pub fn rotation_error(&self, other: &RigidPose) -> f64 {
        let f = (self.rotation - other.rotation).norm();
        2.0 * (f / (2.0 * std::f64::consts::SQRT_2)).min(1.0).asin()
    }

    pub fn translation_error(&self, other: &RigidPose) -> f64 {
        (self.translation - other.translation).norm()
    }
}

impl CameraView {
    /// World-to-camera pose.
    pub fn pose(&self) -> RigidPose {
        RigidPose::new(self.rotation, self.translation)
    }
}

/// Gram-Schmidt re-orthonormalization of a rotation matrix (rows kept in order).
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let r = Rotation3::from_matrix_eps(m, 1e-12, 100, Rotation3::identity());
    *r.matrix()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn intr() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 32.0, 32.0)
    }

    #[test]
    fn look_at_puts_target_on_principal_point() {
        let cam = CameraView::look_at(
            intr(),
            64,
            64,
            Vector3::new(1.0, -2.0, 0.5),
            Vector3::new(0.1, 0.2, 0.3),
            Vector3::z(),
        )
        .unwrap();
        cam.validate().unwrap();
        let (px, depth) = cam.project_world(&Vector3::new(0.1, 0.2, 0.3)).unwrap();
        assert_relative_eq!(px.x, 32.0, epsilon = 1e-9);
        assert_relative_eq!(px.y, 32.0, epsilon = 1e-9);
        assert_relative_eq!(depth, (Vector3::new(0.9, -2.2, 0.2)).norm(), epsilon = 1e-12);
        assert_relative_eq!(cam.center(), Vector3::new(1.0, -2.0, 0.5), epsilon = 1e-12);
    }

    #[test]
    fn look_at_up_maps_to_negative_image_y() {
        let cam = CameraView::look_at(
            intr(),
            64,
            64,
            Vector3::new(0.0, -3.0, 0.0),
            Vector3::zeros(),
            Vector3::z(),
        )
        .unwrap();
        let (px, _) = cam.project_world(&Vector3::new(0.0, 0.0, 0.5)).unwrap();
        assert!(px.y < 32.0);
    }

    #[test]
    fn isometry_round_trip() {
        let iso = Isometry3::new(Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.3, -0.2, 0.9));
        let cam = CameraView::new(intr(), 64, 64, iso);
        let back = cam.world_to_camera();
        let p = Vector3::new(0.4, 0.5, -0.6);
        assert_relative_eq!(
            back * nalgebra::Point3::from(p),
            iso * nalgebra::Point3::from(p),
            epsilon = 1e-12
        );
    }

    #[test]
    fn invalid_intrinsics_rejected() {
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0).validate().is_err());
        assert!(Intrinsics::new(1.0, f64::NAN, 0.0, 0.0).validate().is_err());
    }
}

//! Projective kernels: splat homography, pixel planes, ray-splat
//! intersection and the low-pass bounded Gaussian.

use nalgebra::{Matrix3, Matrix4, Point2, Vector3, Vector4};

use crate::camera::CameraView;
use crate::scene::SurfelGaussian;

/// Below this `|D|` the splat is seen edge-on and only the screen-space
/// low-pass term contributes.
pub const DEGENERATE_EPS: f64 = 1e-12;
/// Default low-pass filter radius in pixels.
pub const LOWPASS_RADIUS: f64 = std::f64::consts::FRAC_1_SQRT_2;
/// Default near plane in meters.
pub const NEAR_PLANE: f64 = 1e-4;

/// Local tangent-plane to world (`h`) and to screen-homogeneous (`wh`) maps.
///
/// `wh * (u, v, 1, 1)` yields `(x w, y w, depth, w)` with `(x, y)` the pixel
/// position and `w` the camera-space depth.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatHomography {
    pub h: Matrix4<f64>,
    pub wh: Matrix4<f64>,
}

/// Pixel planes pulled back into tangent-plane coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelPlanes {
    pub h_u: Vector4<f64>,
    pub h_v: Vector4<f64>,
}

/// World-to-screen-homogeneous matrix for a camera.
pub fn screen_matrix(camera: &CameraView) -> Matrix4<f64> {
    let k = &camera.intrinsics;
    let proj = Matrix4::new(
        k.fx, 0.0, k.cx, 0.0, //
        0.0, k.fy, k.cy, 0.0, //
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 1.0, 0.0,
    );
    let mut w = Matrix4::identity();
    w.fixed_view_mut::<3, 3>(0, 0).copy_from(&camera.rotation);
    w.fixed_view_mut::<3, 1>(0, 3).copy_from(&camera.translation);
    proj * w
}

pub fn build_splat_homography(p: &SurfelGaussian, camera: &CameraView) -> SplatHomography {
    let mut h = Matrix4::zeros();
    h.fixed_view_mut::<3, 1>(0, 0).copy_from(&(p.tangent_u * p.scale[0]));
    h.fixed_view_mut::<3, 1>(0, 1).copy_from(&(p.tangent_v * p.scale[1]));
    h.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.center);
    h[(3, 3)] = 1.0;
    let wh = screen_matrix(camera) * h;
    SplatHomography { h, wh }
}

impl SplatHomography {
    /// World point of local coordinates `(u, v)`.
    pub fn world_point(&self, u: f64, v: f64) -> Vector3<f64> {
        let x = self.h * Vector4::new(u, v, 1.0, 1.0);
        Vector3::new(x.x, x.y, x.z) / x.w
    }

    /// Planes `(WH)^T h_x'` and `(WH)^T h_y'` for the pixel at `(x, y)`.
    pub fn pixel_planes(&self, x: f64, y: f64) -> PixelPlanes {
        let t = self.wh.transpose();
        PixelPlanes {
            h_u: t * Vector4::new(-1.0, 0.0, 0.0, x),
            h_v: t * Vector4::new(0.0, -1.0, 0.0, y),
        }
    }
}

/// Solves `h_u . (u, v, 1, 1) = h_v . (u, v, 1, 1) = 0`.
/// Returns `None` when the splat is edge-on (`|D| < 1e-12`).
pub fn ray_splat_intersect(planes: &PixelPlanes) -> Option<(f64, f64)> {
    let (a, b) = (&planes.h_u, &planes.h_v);
    let det = a[0] * b[1] - a[1] * b[0];
    if det.abs() < DEGENERATE_EPS || !det.is_finite() {
        return None;
    }
    let u = (a[1] * b[3] - a[3] * b[1]) / det;
    let v = (a[3] * b[0] - a[0] * b[3]) / det;
    Some((u, v))
}

/// Camera-space depth of the tangent-plane point `(u, v)`.
pub fn geometric_depth(p: &SurfelGaussian, camera: &CameraView, u: f64, v: f64) -> f64 {
    let world = p.center + p.tangent_u * (p.scale[0] * u) + p.tangent_v * (p.scale[1] * v);
    camera.to_camera(&world).z
}

/// `max{ exp(-(u^2+v^2)/2), exp(-|pixel - mu'|^2 / (2 r^2)) }`.
pub fn eval_bounded_gaussian(u: f64, v: f64, pixel: Point2<f64>, projected_center: Point2<f64>, radius: f64) -> f64 {
    let object = (-0.5 * (u * u + v * v)).exp();
    let d2 = (pixel - projected_center).norm_squared();
    let screen = (-0.5 * d2 / (radius * radius)).exp();
    object.max(screen)
}

/// Screen-space bounding box of the image of the disk `u^2 + v^2 <= rho`
/// under the 3x3 map `t` (rows of screen-homogeneous coordinates, acting on
/// `(u, v, 1)`). `None` when the disk crosses the camera plane, in which case
/// the image is unbounded.
pub fn disk_screen_bounds(t: &Matrix3<f64>, rho: f64) -> Option<[f64; 4]> {
    let a = t.column(0);
    let b = t.column(1);
    let c = t.column(2);
    let dual = |i: usize, j: usize| a[i] * a[j] + b[i] * b[j] - c[i] * c[j] / rho;
    let d22 = dual(2, 2);
    if !(d22 < 0.0) {
        return None;
    }
    let xc = dual(0, 2) / d22;
    let yc = dual(1, 2) / d22;
    let hx = (xc * xc - dual(0, 0) / d22).max(0.0).sqrt();
    let hy = (yc * yc - dual(1, 1) / d22).max(0.0).sqrt();
    let out = [xc - hx, xc + hx, yc - hy, yc + hy];
    out.iter().all(|v| v.is_finite()).then_some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Intrinsics;
    use approx::assert_relative_eq;
    use nalgebra::{Isometry3, Rotation3};

    fn identity_camera() -> CameraView {
        CameraView::new(Intrinsics::new(100.0, 100.0, 32.0, 32.0), 64, 64, Isometry3::identity())
    }

    fn splat(center: Vector3<f64>, rot: Matrix3<f64>, s: [f64; 2]) -> SurfelGaussian {
        SurfelGaussian::new(center, &rot, s, 0.5, [0.5; 3])
    }

    #[test]
    fn homography_identity_frame() {
        let p = splat(Vector3::zeros(), Matrix3::identity(), [1.0, 1.0]);
        let h = build_splat_homography(&p, &identity_camera());
        assert_eq!(h.world_point(0.3, -0.7), Vector3::new(0.3, -0.7, 0.0));
        let p = splat(Vector3::new(1.0, 2.0, 3.0), Matrix3::identity(), [1.0, 1.0]);
        let h = build_splat_homography(&p, &identity_camera());
        assert_eq!(h.world_point(0.3, -0.7), Vector3::new(1.3, 1.3, 3.0));
        assert_eq!(h.h.row(3).into_owned(), nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn frontal_splat_principal_point() {
        let p = splat(Vector3::new(0.0, 0.0, 1.0), Matrix3::identity(), [0.1, 0.1]);
        let cam = identity_camera();
        let h = build_splat_homography(&p, &cam);
        let (u, v) = ray_splat_intersect(&h.pixel_planes(32.0, 32.0)).unwrap();
        assert_relative_eq!(u, 0.0, epsilon = 1e-15);
        assert_relative_eq!(v, 0.0, epsilon = 1e-15);
        assert_relative_eq!(geometric_depth(&p, &cam, u, v), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn translated_camera_depth() {
        let p = splat(Vector3::new(0.0, 0.0, 1.0), Matrix3::identity(), [0.1, 0.1]);
        // Camera center at z = -2.
        let cam = CameraView::new(
            Intrinsics::new(100.0, 100.0, 32.0, 32.0),
            64,
            64,
            Isometry3::translation(0.0, 0.0, 2.0),
        );
        let h = build_splat_homography(&p, &cam);
        let (u, v) = ray_splat_intersect(&h.pixel_planes(32.0, 32.0)).unwrap();
        assert_relative_eq!(geometric_depth(&p, &cam, u, v), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn tilted_splat_matches_ray_plane() {
        let rot = *Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::FRAC_PI_4).matrix();
        let p = splat(Vector3::new(0.05, -0.02, 1.0), rot, [0.2, 0.3]);
        let cam = identity_camera();
        let h = build_splat_homography(&p, &cam);
        for (x, y) in [(32.0, 32.0), (40.0, 25.0), (20.0, 41.0)] {
            let (u, v) = ray_splat_intersect(&h.pixel_planes(x, y)).unwrap();
            // Ray through the pixel, intersected with the splat plane.
            let dir = cam.intrinsics.unproject(x, y);
            let n = p.normal();
            let t = n.dot(&p.center) / n.dot(&dir);
            let hit = dir * t;
            let local = hit - p.center;
            assert_relative_eq!(u, local.dot(&p.tangent_u) / p.scale[0], epsilon = 1e-9);
            assert_relative_eq!(v, local.dot(&p.tangent_v) / p.scale[1], epsilon = 1e-9);
            assert_relative_eq!(geometric_depth(&p, &cam, u, v), hit.z, epsilon = 1e-9);
        }
    }

    #[test]
    fn edge_on_splat_is_degenerate() {
        // Normal along x, camera looks along z through the center: the
        // splat plane contains the viewing ray of the principal pixel.
        let rot = Matrix3::from_columns(&[Vector3::y(), Vector3::z(), Vector3::x()]);
        let p = splat(Vector3::new(0.0, 0.0, 1.0), rot, [0.1, 0.1]);
        let h = build_splat_homography(&p, &identity_camera());
        assert!(ray_splat_intersect(&h.pixel_planes(32.0, 32.0)).is_none());
    }

    #[test]
    fn bounded_gaussian_values() {
        let c = Point2::new(10.0, 10.0);
        assert_eq!(eval_bounded_gaussian(0.0, 0.0, c, c, LOWPASS_RADIUS), 1.0);
        let far = Point2::new(100.0, 100.0);
        assert_relative_eq!(
            eval_bounded_gaussian(1.0, 0.0, far, c, LOWPASS_RADIUS),
            (-0.5f64).exp(),
            epsilon = 1e-15
        );
        let at_r = Point2::new(10.0 + LOWPASS_RADIUS, 10.0);
        assert_relative_eq!(
            eval_bounded_gaussian(1e3, 1e3, at_r, c, LOWPASS_RADIUS),
            (-0.5f64).exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn disk_bounds_of_frontal_disk() {
        let p = splat(Vector3::new(0.0, 0.0, 2.0), Matrix3::identity(), [0.1, 0.2]);
        let h = build_splat_homography(&p, &identity_camera());
        let wh = h.wh;
        let t = Matrix3::new(
            wh[(0, 0)],
            wh[(0, 1)],
            wh[(0, 3)],
            wh[(1, 0)],
            wh[(1, 1)],
            wh[(1, 3)],
            wh[(3, 0)],
            wh[(3, 1)],
            wh[(3, 3)],
        );
        let b = disk_screen_bounds(&t, 9.0).unwrap();
        // 3 sigma * 0.1 m at 2 m with f = 100 -> 15 px; 0.2 m -> 30 px.
        assert_relative_eq!(b[0], 32.0 - 15.0, epsilon = 1e-9);
        assert_relative_eq!(b[1], 32.0 + 15.0, epsilon = 1e-9);
        assert_relative_eq!(b[2], 32.0 - 30.0, epsilon = 1e-9);
        assert_relative_eq!(b[3], 32.0 + 30.0, epsilon = 1e-9);
    }

    #[test]
    fn disk_crossing_camera_plane_is_unbounded() {
        let p = splat(
            Vector3::new(0.0, 0.0, 0.5),
            Matrix3::from_columns(&[Vector3::x(), Vector3::z(), -Vector3::y()]),
            [1.0, 1.0],
        );
        let h = build_splat_homography(&p, &identity_camera());
        let wh = h.wh;
        let t = Matrix3::new(
            wh[(0, 0)],
            wh[(0, 1)],
            wh[(0, 3)],
            wh[(1, 0)],
            wh[(1, 1)],
            wh[(1, 3)],
            wh[(3, 0)],
            wh[(3, 1)],
            wh[(3, 3)],
        );
        assert!(disk_screen_bounds(&t, 9.0).is_none());
    }
}

//! Synthetic views: random camera perturbations and depth-guided forward
//! warping of a given view into the perturbed camera.
//!
//! Each valid source pixel is lifted with its blended depth,
//! `X = d K^-1 (u, v, 1)`, moved by the camera-frame motion `T`, projected
//! with `K` and splatted to the nearest target pixel. A z-buffer keeps the
//! strictly nearest sample; untouched target pixels stay invalid.

use nalgebra::{Isometry3, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::CameraView;
use crate::error::{invalid, Result};
use crate::raster::{Image, Mask, ScalarMap};

/// Distribution of camera perturbations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationParams {
    /// Standard deviation of each Euler angle, degrees.
    pub rot_std_deg: f64,
    /// Samples whose total rotation angle exceeds this are redrawn, degrees.
    pub rot_cap_deg: f64,
    /// Per-axis translation standard deviation, meters.
    pub trans_std_m: [f64; 3],
    pub seed: u64,
}

impl Default for PerturbationParams {
    fn default() -> Self {
        Self {
            rot_std_deg: 15.0,
            rot_cap_deg: 45.0,
            trans_std_m: [0.01, 0.01, 0.05],
            seed: 0,
        }
    }
}

impl PerturbationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rot_std_deg >= 0.0 && self.rot_std_deg <= self.rot_cap_deg && self.rot_cap_deg <= 180.0) {
            return Err(invalid("perturbation needs 0 <= rot_std_deg <= rot_cap_deg <= 180"));
        }
        if !self.trans_std_m.iter().all(|s| s.is_finite() && *s >= 0.0) {
            return Err(invalid("translation standard deviations must be non-negative"));
        }
        Ok(())
    }
}

/// Rotation from intrinsic X-Y-Z Euler angles (radians): `Rx(a) Ry(b) Rz(c)`.
pub fn euler_xyz_intrinsic(a: f64, b: f64, c: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), a)
        * Rotation3::from_axis_angle(&Vector3::y_axis(), b)
        * Rotation3::from_axis_angle(&Vector3::z_axis(), c)
}

/// Draws one perturbation from `rng`.
pub fn sample_pose_perturbation_with(params: &PerturbationParams, rng: &mut ChaCha8Rng) -> Result<Isometry3<f64>> {
    params.validate()?;
    let cap = params.rot_cap_deg.to_radians();
    let rot = if params.rot_std_deg == 0.0 {
        Rotation3::identity()
    } else {
        let normal = Normal::new(0.0, params.rot_std_deg.to_radians()).expect("finite std");
        loop {
            let r = euler_xyz_intrinsic(normal.sample(rng), normal.sample(rng), normal.sample(rng));
            if r.angle() <= cap {
                break r;
            }
        }
    };
    let mut t = Vector3::zeros();
    for k in 0..3 {
        if params.trans_std_m[k] > 0.0 {
            t[k] = Normal::new(0.0, params.trans_std_m[k]).expect("finite std").sample(rng);
        }
    }
    Ok(Isometry3::from_parts(
        Translation3::from(t),
        UnitQuaternion::from_rotation_matrix(&rot),
    ))
}

/// Draws one perturbation seeded by `params.seed`.
pub fn sample_pose_perturbation(params: &PerturbationParams) -> Result<Isometry3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    sample_pose_perturbation_with(params, &mut rng)
}

/// Applies `perturbation` about `pivot` (camera coordinates):
/// `X -> R (X - pivot) + pivot + t`.
pub fn about_pivot(perturbation: &Isometry3<f64>, pivot: &Vector3<f64>) -> Isometry3<f64> {
    let r = perturbation.rotation;
    let t = pivot - r * pivot + perturbation.translation.vector;
    Isometry3::from_parts(Translation3::from(t), r)
}

/// A warped view and its supervision mask.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpedView {
    pub image: Image,
    pub validity: Mask,
    /// Target-frame depth of the retained sample; NaN where invalid.
    pub depth: ScalarMap,
    pub target_camera: CameraView,
    /// Set when no source pixel landed inside the target frame.
    pub empty: bool,
}

/// Forward-warps `source` seen by `camera` into `camera.moved(transform)`.
/// Pixels with non-finite or non-positive depth are skipped.
pub fn warp_view(
    source: &Image,
    d_alpha: &ScalarMap,
    camera: &CameraView,
    transform: &Isometry3<f64>,
) -> Result<WarpedView> {
    camera.validate()?;
    let (w, h) = (camera.width, camera.height);
    source.ensure_dims(w, h)?;
    d_alpha.ensure_dims(w, h)?;
    let intr = &camera.intrinsics;
    let mut image = Image::filled(w, h, [0.0; 3]);
    let mut depth = ScalarMap::filled(w, h, f64::NAN);
    let mut validity = Mask::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let d = *d_alpha.get(x, y);
            if !(d.is_finite() && d > 0.0) {
                continue;
            }
            let xs = intr.unproject(x as f64, y as f64) * d;
            let xt = transform * nalgebra::Point3::from(xs);
            if !(xt.z > 0.0) {
                continue;
            }
            let p = intr.project(&xt.coords);
            let (tx, ty) = (p.x.round(), p.y.round());
            if !(tx >= 0.0 && ty >= 0.0 && tx < w as f64 && ty < h as f64) {
                continue;
            }
            let (tx, ty) = (tx as usize, ty as usize);
            let zb = depth.get_mut(tx, ty);
            if zb.is_nan() || xt.z < *zb {
                *zb = xt.z;
                image.set(tx, ty, *source.get(x, y));
                validity.set(tx, ty, true);
            }
        }
    }
    let empty = validity.count() == 0;
    if empty {
        log::warn!("warped view has no valid pixels");
    }
    Ok(WarpedView {
        image,
        validity,
        depth,
        target_camera: camera.moved(transform),
        empty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Intrinsics;

    fn cam() -> CameraView {
        CameraView::new(Intrinsics::new(50.0, 50.0, 15.5, 11.5), 32, 24, Isometry3::identity())
    }

    #[test]
    fn zero_std_is_identity() {
        let p = PerturbationParams {
            rot_std_deg: 0.0,
            trans_std_m: [0.0; 3],
            ..Default::default()
        };
        let t = sample_pose_perturbation(&p).unwrap();
        assert_eq!(t, Isometry3::identity());
    }

    #[test]
    fn seeded_sampling_is_reproducible_and_capped() {
        let p = PerturbationParams {
            seed: 9,
            ..Default::default()
        };
        assert_eq!(
            sample_pose_perturbation(&p).unwrap(),
            sample_pose_perturbation(&p).unwrap()
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let t = sample_pose_perturbation_with(&p, &mut rng).unwrap();
            assert!(t.rotation.angle() <= 45f64.to_radians() + 1e-12);
        }
    }

    #[test]
    fn euler_convention_is_intrinsic_xyz() {
        let r = euler_xyz_intrinsic(0.0, 0.0, 0.3);
        let expected = Rotation3::from_axis_angle(&Vector3::z_axis(), 0.3);
        assert!((r.matrix() - expected.matrix()).abs().max() < 1e-15);
        let r = euler_xyz_intrinsic(0.2, 0.1, 0.0);
        let v = r * Vector3::z();
        let expected = Rotation3::from_axis_angle(&Vector3::x_axis(), 0.2)
            * (Rotation3::from_axis_angle(&Vector3::y_axis(), 0.1) * Vector3::z());
        assert!((v - expected).norm() < 1e-15);
    }

    #[test]
    fn identity_warp_reproduces_source() {
        let c = cam();
        let src = Image::from_fn(32, 24, |x, y| [x as f64 / 32.0, y as f64 / 24.0, 0.5]);
        let depth = ScalarMap::from_fn(32, 24, |x, y| {
            if (x + y) % 7 == 0 {
                f64::NAN
            } else {
                2.0 + 0.01 * x as f64
            }
        });
        let out = warp_view(&src, &depth, &c, &Isometry3::identity()).unwrap();
        for y in 0..24 {
            for x in 0..32 {
                let valid = depth.get(x, y).is_finite();
                assert_eq!(*out.validity.get(x, y), valid);
                if valid {
                    assert_eq!(out.image.get(x, y), src.get(x, y));
                }
            }
        }
    }

    #[test]
    fn offframe_motion_gives_empty_warning() {
        let c = cam();
        let src = Image::filled(32, 24, [1.0; 3]);
        let depth = ScalarMap::filled(32, 24, 1.0);
        let t = Isometry3::translation(100.0, 0.0, 0.0);
        let out = warp_view(&src, &depth, &c, &t).unwrap();
        assert!(out.empty);
        assert_eq!(out.validity.count(), 0);
    }

    fn collide(near_px: usize, far_px: usize) {
        let c = cam();
        let src = Image::from_fn(32, 24, |x, _| [x as f64, 0.0, 0.0]);
        let mut depth = ScalarMap::filled(32, 24, f64::NAN);
        let (z1, z2) = (2.0, 4.0);
        depth.set(near_px, 10, z1);
        depth.set(far_px, 10, z2);
        let x1 = c.intrinsics.unproject(near_px as f64, 10.0).x * z1;
        let x2 = c.intrinsics.unproject(far_px as f64, 10.0).x * z2;
        let tx = (z1 * x2 - z2 * x1) / (z2 - z1);
        let target = (50.0 * (x1 + tx) / z1 + 15.5).round() as usize;
        let out = warp_view(&src, &depth, &c, &Isometry3::translation(tx, 0.0, 0.0)).unwrap();
        assert_eq!(out.validity.count(), 1);
        assert_eq!(out.image.get(target, 10)[0], near_px as f64);
        assert_eq!(*out.depth.get(target, 10), z1);
    }

    #[test]
    fn zbuffer_keeps_nearest_in_either_scan_order() {
        collide(10, 12);
        collide(12, 10);
    }
}

//! Dense 2D-3D correspondence maps and occluded multi-object composition.
//!
//! A map pairs every object pixel `(u, v)` with the object-space point
//! `X_obj = R^T (d_alpha K^-1 (u, v, 1) - t)` lifted from the rendered
//! blended depth, where `(R, t)` maps object to camera coordinates.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraView, Intrinsics, RigidPose};
use crate::error::{invalid, Result};
use crate::raster::{Image, Mask, ScalarMap};
use crate::rasterizer::{render, RenderBundle, RenderOptions};
use crate::scene::ObjectGaussian;

/// One pixel and its object-space point (meters).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub pixel: [usize; 2],
    pub point: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceMap {
    /// Row-major entries, all inside `mask`.
    pub entries: Vec<Correspondence>,
    /// Object pixels (accumulated alpha at least `sigma`).
    pub mask: Mask,
    /// Object-to-camera pose.
    pub pose: RigidPose,
    pub intrinsics: Intrinsics,
    /// Mask pixels left out because their depth was not finite.
    pub invalid_depth: usize,
}

impl CorrespondenceMap {
    pub fn width(&self) -> usize {
        self.mask.width()
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    /// Dense `(X, Y, Z)` raster, NaN outside the entries.
    pub fn xyz_image(&self) -> Image {
        let mut img = Image::filled(self.width(), self.height(), [f64::NAN; 3]);
        for e in &self.entries {
            img.set(e.pixel[0], e.pixel[1], [e.point.x, e.point.y, e.point.z]);
        }
        img
    }

    /// Largest distance (pixels) between an entry's pixel and the
    /// projection of its point.
    pub fn max_reprojection_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| {
                let c = self.pose.apply(&e.point);
                let p = self.intrinsics.project(&c);
                (p.x - e.pixel[0] as f64).hypot(p.y - e.pixel[1] as f64)
            })
            .fold(0.0, f64::max)
    }
}

fn map_from_bundle(bundle: &RenderBundle, pose: RigidPose, sigma: f64, restrict: Option<&Mask>) -> CorrespondenceMap {
    let (w, h) = (bundle.width, bundle.height);
    let k = bundle.intrinsics;
    let rt = pose.rotation.transpose();
    let mut mask = Mask::filled(w, h, false);
    let mut entries = Vec::new();
    let mut invalid_depth = 0;
    for y in 0..h {
        for x in 0..w {
            if *bundle.alpha.get(x, y) < sigma || restrict.is_some_and(|m| !*m.get(x, y)) {
                continue;
            }
            mask.set(x, y, true);
            let d = *bundle.d_alpha.get(x, y);
            if !(d.is_finite() && d > 0.0) {
                invalid_depth += 1;
                continue;
            }
            let cam = k.unproject(x as f64, y as f64) * d;
            entries.push(Correspondence {
                pixel: [x, y],
                point: rt * (cam - pose.translation),
            });
        }
    }
    if invalid_depth > 0 {
        log::warn!("{invalid_depth} mask pixels without a finite depth were left out");
    }
    CorrespondenceMap {
        entries,
        mask,
        pose,
        intrinsics: k,
        invalid_depth,
    }
}

/// Renders `scene` (object coordinates) placed at `pose` (object to world)
/// and seen by `camera`, and lifts every object pixel to object space.
/// The map stores the object-to-camera pose `camera * pose`.
pub fn generate_correspondence_map(
    scene: &ObjectGaussian,
    camera: &CameraView,
    pose: &RigidPose,
    opts: &RenderOptions,
) -> Result<CorrespondenceMap> {
    let obj_to_cam = camera.pose().compose(pose);
    let cam = camera.with_pose(obj_to_cam.rotation, obj_to_cam.translation);
    let bundle = render(scene, &cam, opts)?;
    Ok(map_from_bundle(&bundle, obj_to_cam, opts.sigma, None))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    /// Black color with zero alpha outside all objects.
    Transparent,
    Color([f64; 3]),
}

/// An object of a composite: primitives in object coordinates and the
/// object-to-world pose.
#[derive(Clone, Debug)]
pub struct SceneObject {
    pub scene: ObjectGaussian,
    pub pose: RigidPose,
}

#[derive(Clone, Debug)]
pub struct CompositeScene {
    pub objects: Vec<SceneObject>,
    pub camera: CameraView,
    pub image: Image,
    /// Pixels owned by some object.
    pub coverage: Mask,
    /// Per object: pixels where it is the nearest object.
    pub visible: Vec<Mask>,
    /// Per object: its solo silhouette.
    pub amodal: Vec<Mask>,
    /// Per object: correspondences restricted to its visible mask.
    pub maps: Vec<CorrespondenceMap>,
}

/// Renders each object alone, then gives every pixel to the object with the
/// smallest blended depth among those covering it.
pub fn compose_occluded_scene(
    objects: &[SceneObject],
    camera: &CameraView,
    background: Background,
    opts: &RenderOptions,
) -> Result<CompositeScene> {
    if objects.is_empty() {
        return Err(invalid("composition needs at least one object"));
    }
    let (w, h) = (camera.width, camera.height);
    let solo: Vec<(RenderBundle, RigidPose)> = objects
        .par_iter()
        .map(|o| {
            let pose = camera.pose().compose(&o.pose);
            let cam = camera.with_pose(pose.rotation, pose.translation);
            render(&o.scene, &cam, opts).map(|b| (b, pose))
        })
        .collect::<Result<_>>()?;

    let amodal: Vec<Mask> = solo.iter().map(|(b, _)| b.alpha.map(|&a| a >= opts.sigma)).collect();
    let mut owner: Vec<Option<usize>> = vec![None; w * h];
    let mut best = ScalarMap::filled(w, h, f64::INFINITY);
    for (k, (b, _)) in solo.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                if !*amodal[k].get(x, y) {
                    continue;
                }
                let d = *b.d_alpha.get(x, y);
                let d = if d.is_finite() { d } else { f64::MAX };
                if owner[y * w + x].is_none() || d < *best.get(x, y) {
                    best.set(x, y, d);
                    owner[y * w + x] = Some(k);
                }
            }
        }
    }
    let bg = match background {
        Background::Transparent => [0.0; 3],
        Background::Color(c) => c,
    };
    let mut image = Image::filled(w, h, bg);
    let mut coverage = Mask::filled(w, h, false);
    let mut visible = vec![Mask::filled(w, h, false); objects.len()];
    for y in 0..h {
        for x in 0..w {
            if let Some(k) = owner[y * w + x] {
                image.set(x, y, *solo[k].0.color.get(x, y));
                coverage.set(x, y, true);
                visible[k].set(x, y, true);
            }
        }
    }
    let maps = solo
        .iter()
        .zip(&visible)
        .map(|((b, pose), vis)| map_from_bundle(b, *pose, opts.sigma, Some(vis)))
        .collect();
    Ok(CompositeScene {
        objects: objects.to_vec(),
        camera: camera.clone(),
        image,
        coverage,
        visible,
        amodal,
        maps,
    })
}

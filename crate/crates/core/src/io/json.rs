//! JSON camera files and output sidecars.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraView, Intrinsics, RigidPose};
use crate::correspondence::CorrespondenceMap;
use crate::error::{invalid, Result};

/// Unit declaration written into every JSON artifact.
pub const UNITS: &str = "meters, pixels";

fn units() -> String {
    UNITS.to_string()
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// One posed camera. `rotation_wxyz` and `translation` map world to camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    #[serde(default = "units")]
    pub units: String,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation_wxyz: [f64; 4],
    pub translation: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

impl CameraFile {
    pub fn from_camera(cam: &CameraView) -> Self {
        let q = cam.world_to_camera().rotation;
        let k = cam.intrinsics;
        Self {
            units: units(),
            width: cam.width,
            height: cam.height,
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            rotation_wxyz: [q.w, q.i, q.j, q.k],
            translation: cam.translation.into(),
            image: None,
            mask: None,
        }
    }

    /// Checks the intrinsics and that the quaternion is unit within 1e-6.
    pub fn to_camera(&self) -> Result<CameraView> {
        let [w, x, y, z] = self.rotation_wxyz;
        let q = Quaternion::new(w, x, y, z);
        if !((q.norm() - 1.0).abs() <= 1e-6) {
            return Err(invalid(format!("camera quaternion norm {} is not 1", q.norm())));
        }
        let iso = nalgebra::Isometry3::from_parts(
            Translation3::from(Vector3::from(self.translation)),
            UnitQuaternion::from_quaternion(q),
        );
        let cam = CameraView::new(
            Intrinsics::new(self.fx, self.fy, self.cx, self.cy),
            self.width,
            self.height,
            iso,
        );
        cam.validate()?;
        Ok(cam)
    }

    /// Image and mask paths are taken relative to `base` unless absolute.
    pub fn resolve(&self, base: &Path) -> (Option<PathBuf>, Option<PathBuf>) {
        let r = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| if p.is_absolute() { p.clone() } else { base.join(p) })
        };
        (r(&self.image), r(&self.mask))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSet {
    #[serde(default = "units")]
    pub units: String,
    pub cameras: Vec<CameraFile>,
}

impl CameraSet {
    pub fn from_cameras(cams: &[CameraView]) -> Self {
        Self {
            units: units(),
            cameras: cams.iter().map(CameraFile::from_camera).collect(),
        }
    }

    pub fn views(&self) -> Result<Vec<CameraView>> {
        self.cameras.iter().map(CameraFile::to_camera).collect()
    }
}

/// Describes the rasters written by a render.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderSidecar {
    pub units: String,
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    pub mask_threshold: f64,
    pub visible_primitives: usize,
    /// Role (color, mask, d_alpha, ...) to file name.
    pub files: BTreeMap<String, String>,
}

impl RenderSidecar {
    pub fn new(
        width: usize,
        height: usize,
        intrinsics: Intrinsics,
        mask_threshold: f64,
        visible_primitives: usize,
    ) -> Self {
        Self {
            units: "depth in meters along the optical axis; normals in camera space".into(),
            width,
            height,
            intrinsics,
            mask_threshold,
            visible_primitives,
            files: BTreeMap::new(),
        }
    }
}

/// Metadata next to a correspondence XYZ map and its mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSidecar {
    pub units: String,
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    pub object_to_camera: RigidPose,
    pub count: usize,
    pub invalid_depth: usize,
    pub xyz_file: String,
    pub mask_file: String,
}

impl CorrespondenceSidecar {
    pub fn new(map: &CorrespondenceMap, xyz_file: &str, mask_file: &str) -> Self {
        Self {
            units: "object-space XYZ in meters; pixel (u, v) = (column, row)".into(),
            width: map.width(),
            height: map.height(),
            intrinsics: map.intrinsics,
            object_to_camera: map.pose,
            count: map.entries.len(),
            invalid_depth: map.invalid_depth,
            xyz_file: xyz_file.into(),
            mask_file: mask_file.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraView {
        CameraView::look_at(
            Intrinsics::new(100.0, 90.0, 31.5, 23.5),
            64,
            48,
            Vector3::new(1.0, -2.0, 0.5),
            Vector3::zeros(),
            Vector3::z(),
        )
        .unwrap()
    }

    #[test]
    fn camera_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cams.json");
        write_json(&p, &CameraSet::from_cameras(&[cam()])).unwrap();
        let set: CameraSet = read_json(&p).unwrap();
        let back = &set.views().unwrap()[0];
        let c = cam();
        assert_eq!(
            (back.width, back.height, back.intrinsics),
            (c.width, c.height, c.intrinsics)
        );
        assert!((back.rotation - c.rotation).norm() < 1e-12);
        assert!((back.translation - c.translation).norm() < 1e-12);
        assert_eq!(set.units, UNITS);
    }

    #[test]
    fn quaternion_must_be_unit() {
        let mut f = CameraFile::from_camera(&cam());
        f.rotation_wxyz[0] *= 1.0 + 1e-7;
        assert!(f.to_camera().is_ok());
        f.rotation_wxyz = [1.1, 0.0, 0.0, 0.0];
        assert!(f.to_camera().is_err());
        let mut g = CameraFile::from_camera(&cam());
        g.fx = 0.0;
        assert!(g.to_camera().is_err());
    }

    #[test]
    fn units_default_and_missing_fields_fail() {
        let text = r#"{"cameras": [{"width": 4, "height": 4, "fx": 1, "fy": 1, "cx": 2, "cy": 2,
            "rotation_wxyz": [1, 0, 0, 0], "translation": [0, 0, 1]}]}"#;
        let set: CameraSet = serde_json::from_str(text).unwrap();
        assert_eq!(set.units, UNITS);
        assert!(serde_json::from_str::<CameraSet>(r#"{"cameras": [{"width": 4}]}"#).is_err());
    }
}

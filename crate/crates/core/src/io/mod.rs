//! File formats.
//!
//! | artifact | container | units |
//! |---|---|---|
//! | scene | PLY, binary little-endian or ASCII, `double` properties | meters |
//! | depth, normals, XYZ maps | PFM, little-endian, bottom-up rows | meters |
//! | color, masks | 8-bit PNG | display values |
//! | cameras, configs, reports, sidecars | JSON | meters, pixels |
//!
//! Scene headers carry a format version, the primitive count, SH degree,
//! bounds, the `no_prune` flag and the units as comment lines.

mod json;
mod ply;
mod raster;

pub use json::{read_json, write_json, CameraFile, CameraSet, CorrespondenceSidecar, RenderSidecar, UNITS};
pub use ply::{load_scene, read_scene, save_scene, write_scene, PlyFormat, SCENE_VERSION};
pub use raster::{
    read_color_png, read_mask_png, read_pfm, read_scalar_pfm, write_color_png, write_mask_png, write_pfm,
    write_scalar_pfm, PfmData,
};

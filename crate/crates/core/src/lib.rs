//! Object-centric elliptic-disk Gaussians.
//!
//! The crate covers the full loop from sparse posed images to pose
//! evaluation:
//!
//! - [`scene`]: primitives, random cuboid initialization.
//! - [`geometry`]: splat homography and ray-splat intersection kernels.
//! - [`rasterizer`]: tile-parallel rendering of color, alpha, blended and
//!   peak depth, normals and per-pixel contributors, plus its backward pass.
//! - [`losses`]: photometric, warp, geometric-consistency and normal losses.
//! - [`view_synthesis`]: pose perturbations and depth-guided forward warping.
//! - [`optimizer`]: gradients, the training schedule, density control and
//!   online floater pruning.
//! - [`correspondence`]: dense 2D-3D maps and occluded multi-object scenes.
//! - [`pose_eval`]: PnP with RANSAC and the ADD(S) / Proj@5pix / point-cloud
//!   accuracy metrics.
//! - [`io`]: PLY, PFM, PNG and JSON formats.
//! - [`fixtures`]: deterministic toy scenes.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod camera;
pub mod correspondence;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod optimizer;
pub mod pose_eval;
pub mod raster;
pub mod rasterizer;
pub mod scene;
pub mod sh;
pub mod view_synthesis;

pub use camera::{CameraView, Intrinsics, RigidPose};
pub use error::{Error, Result};
pub use raster::{Image, Mask, Raster, ScalarMap};
pub use rasterizer::{render, RenderBundle, RenderOptions};
pub use scene::{init_cuboid_random, Aabb, ObjectGaussian, SurfelGaussian};

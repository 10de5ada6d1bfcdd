//! Tile-parallel forward rendering of elliptic-disk primitives.
//!
//! Each pixel composites the primitives of its 16x16 tile front to back
//! (global sort by camera-space center depth, ties by id) with
//! `T_i = prod_{j<i} (1 - alpha_j g_j)` and blend weight `w_i = T_i alpha_i g_i`.
//! Besides color and accumulated alpha the bundle carries the alpha-blended
//! depth, the peak depth (depth of the max-weight contributor), a blended
//! normal map and a capped per-pixel contributor list used by the
//! geometric losses and floater pruning.
//!
//! Output is independent of the rayon thread count: tiles write disjoint
//! pixels and are merged in a fixed order.

mod backward;
pub(crate) mod kernel;

use nalgebra::Vector3;
use rayon::prelude::*;

pub use backward::{render_backward, BackwardInputs, SceneGrad};
pub use kernel::TILE;

use crate::camera::{CameraView, Intrinsics};
use crate::error::{invalid, Result};
use crate::geometry::{LOWPASS_RADIUS, NEAR_PLANE};
use crate::raster::{Image, Mask, ScalarMap};
use crate::scene::ObjectGaussian;
use kernel::{blended_depth, captured, peak_hit, pixel_hits, prepare, Hit};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    /// Accumulated-alpha threshold for a valid blended depth (and the
    /// default mask threshold).
    pub sigma: f64,
    /// Maximum number of contributors kept per pixel (highest weight first).
    pub contributor_cap: usize,
    /// Highest SH degree evaluated.
    pub sh_degree: usize,
    pub near_plane: f64,
    pub background: [f64; 3],
    /// Kernel support in standard deviations. The kernel is shifted down by
    /// its value at this radius and renormalized, so it reaches zero
    /// continuously at the edge of the support.
    pub cutoff_sigma: f64,
    pub lowpass_radius: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            contributor_cap: 32,
            sh_degree: 3,
            near_plane: NEAR_PLANE,
            background: [0.0; 3],
            cutoff_sigma: 3.0,
            lowpass_radius: LOWPASS_RADIUS,
        }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(invalid("sigma must lie in (0, 1)"));
        }
        if self.contributor_cap < 2 {
            return Err(invalid("contributor_cap must be at least 2"));
        }
        if !(self.near_plane > 0.0) || !(self.cutoff_sigma > 0.0 && self.cutoff_sigma.is_finite()) {
            return Err(invalid("near_plane and cutoff_sigma must be positive"));
        }
        if !(self.lowpass_radius > 0.0) {
            return Err(invalid("low-pass radius must be positive"));
        }
        Ok(())
    }

    /// Raw kernel value at the edge of the support.
    pub fn kernel_floor(&self) -> f64 {
        (-0.5 * self.cutoff_sigma * self.cutoff_sigma).exp()
    }
}

/// One captured contributor of a pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contributor {
    /// Index into `ObjectGaussian::primitives`.
    pub id: u32,
    /// Blend weight `T_i alpha_i g_i`.
    pub weight: f64,
    /// Geometric depth along the pixel ray (meters, camera z).
    pub depth: f64,
    /// `alpha_i g_i`.
    pub alpha_g: f64,
    /// Camera-space unit normal, oriented toward the camera.
    pub normal: [f64; 3],
}

/// Capped per-pixel contributor lists in compressed row layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Contributors {
    offsets: Vec<u32>,
    entries: Vec<Contributor>,
}

impl Contributors {
    pub fn pixel(&self, index: usize) -> &[Contributor] {
        &self.entries[self.offsets[index] as usize..self.offsets[index + 1] as usize]
    }

    pub fn num_pixels(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn total(&self) -> usize {
        self.entries.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderBundle {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    pub color: Image,
    pub alpha: ScalarMap,
    /// Alpha-blended depth, NaN where nothing contributes.
    pub d_alpha: ScalarMap,
    /// Depth of the max-weight contributor, NaN where nothing contributes.
    pub d_peak: ScalarMap,
    /// Weight-averaged contributor normals (camera space); zero where alpha
    /// is below `sigma`.
    pub normal: Image,
    pub contributors: Contributors,
    /// Primitives that survived view culling.
    pub visible: usize,
}

impl RenderBundle {
    pub fn pixel_index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }
}

#[derive(Clone, Debug, Default)]
struct PixelOut {
    color: [f64; 3],
    alpha: f64,
    d_alpha: f64,
    d_peak: f64,
    normal: [f64; 3],
    contributors: Vec<Contributor>,
}

fn shade_pixel(
    prep: &kernel::Prepared,
    hits: &[Hit],
    trans: f64,
    opts: &RenderOptions,
    keep: &mut Vec<usize>,
) -> PixelOut {
    let mut color = [0.0; 3];
    for h in hits {
        let c = &prep.proj[h.proj as usize].color;
        for ch in 0..3 {
            color[ch] += h.weight * c[ch];
        }
    }
    for ch in 0..3 {
        color[ch] += trans * opts.background[ch];
    }
    let (d_alpha, alpha, _) = blended_depth(hits, opts.sigma);
    let d_peak = peak_hit(hits).map_or(f64::NAN, |i| hits[i].geom.depth);

    captured(hits, opts.contributor_cap, keep);
    let mut contributors = Vec::with_capacity(keep.len());
    let mut n = Vector3::zeros();
    for &i in keep.iter() {
        let h = &hits[i];
        let sp = &prep.proj[h.proj as usize];
        n += sp.normal * h.weight;
        contributors.push(Contributor {
            id: sp.id,
            weight: h.weight,
            depth: h.geom.depth,
            alpha_g: h.a,
            normal: [sp.normal.x, sp.normal.y, sp.normal.z],
        });
    }
    let normal = if alpha >= opts.sigma && n.norm() > 0.0 {
        let n = n.normalize();
        [n.x, n.y, n.z]
    } else {
        [0.0; 3]
    };
    PixelOut {
        color,
        alpha,
        d_alpha,
        d_peak,
        normal,
        contributors,
    }
}

/// Renders color, alpha, blended/peak depth, normals and contributor lists.
pub fn render(scene: &ObjectGaussian, camera: &CameraView, opts: &RenderOptions) -> Result<RenderBundle> {
    camera.validate()?;
    opts.validate()?;
    let (w, h) = (camera.width, camera.height);
    let prep = prepare(scene, camera, opts);

    let tile_outputs: Vec<Vec<PixelOut>> = (0..prep.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let rect = prep.tile_rect(tile, w, h);
            let list = &prep.tiles[tile];
            let mut hits = Vec::new();
            let mut keep = Vec::new();
            let mut out = Vec::with_capacity((rect[1] - rect[0]) * (rect[3] - rect[2]));
            for py in rect[2]..rect[3] {
                for px in rect[0]..rect[1] {
                    let trans = pixel_hits(&prep, list, px, py, opts, &mut hits);
                    out.push(shade_pixel(&prep, &hits, trans, opts, &mut keep));
                }
            }
            out
        })
        .collect();

    let mut color = Image::filled(w, h, opts.background);
    let mut alpha = ScalarMap::filled(w, h, 0.0);
    let mut d_alpha = ScalarMap::filled(w, h, f64::NAN);
    let mut d_peak = ScalarMap::filled(w, h, f64::NAN);
    let mut normal = Image::filled(w, h, [0.0; 3]);
    let mut per_pixel: Vec<Vec<Contributor>> = vec![Vec::new(); w * h];
    for (tile, outs) in tile_outputs.into_iter().enumerate() {
        let rect = prep.tile_rect(tile, w, h);
        let mut it = outs.into_iter();
        for py in rect[2]..rect[3] {
            for px in rect[0]..rect[1] {
                let o = it.next().expect("tile output size");
                color.set(px, py, o.color);
                alpha.set(px, py, o.alpha);
                d_alpha.set(px, py, o.d_alpha);
                d_peak.set(px, py, o.d_peak);
                normal.set(px, py, o.normal);
                per_pixel[py * w + px] = o.contributors;
            }
        }
    }
    let mut offsets = Vec::with_capacity(w * h + 1);
    let mut entries = Vec::new();
    offsets.push(0u32);
    for list in per_pixel {
        entries.extend(list);
        offsets.push(entries.len() as u32);
    }
    Ok(RenderBundle {
        width: w,
        height: h,
        intrinsics: camera.intrinsics,
        color,
        alpha,
        d_alpha,
        d_peak,
        normal,
        contributors: Contributors { offsets, entries },
        visible: prep.proj.len(),
    })
}

/// Binary object mask: `alpha >= threshold`.
pub fn alpha_to_mask(bundle: &RenderBundle, threshold: f64) -> Result<Mask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(invalid("mask threshold must lie in (0, 1)"));
    }
    Ok(bundle.alpha.map(|&a| a >= threshold))
}

/// Depth map with entries whose accumulated alpha is below `threshold`
/// replaced by NaN.
pub fn masked_depth(bundle: &RenderBundle, threshold: f64) -> ScalarMap {
    let mut d = bundle.d_alpha.clone();
    for (v, a) in d.as_mut_slice().iter_mut().zip(bundle.alpha.as_slice()) {
        if *a < threshold {
            *v = f64::NAN;
        }
    }
    d
}

/// Normals from depth gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthNormals {
    /// Camera-space unit normals facing the camera; zero where invalid.
    pub normals: Image,
    pub valid: Mask,
}

/// Camera-space normal `phi(u, v)` from central differences of the
/// back-projected blended depth. A pixel is valid when its alpha is at least
/// `sigma` and its four neighbors are inside the image with finite depth.
pub fn depth_normals(d_alpha: &ScalarMap, alpha: &ScalarMap, intrinsics: &Intrinsics, sigma: f64) -> DepthNormals {
    let (w, h) = d_alpha.dims();
    let mut normals = Image::filled(w, h, [0.0; 3]);
    let mut valid = Mask::filled(w, h, false);
    let point = |x: usize, y: usize| -> Option<Vector3<f64>> {
        let d = *d_alpha.get(x, y);
        d.is_finite().then(|| intrinsics.unproject(x as f64, y as f64) * d)
    };
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            if *alpha.get(x, y) < sigma {
                continue;
            }
            let (Some(xp), Some(xm), Some(yp), Some(ym)) =
                (point(x + 1, y), point(x - 1, y), point(x, y + 1), point(x, y - 1))
            else {
                continue;
            };
            let n = (yp - ym).cross(&(xp - xm));
            let len = n.norm();
            if !(len > 0.0) || !len.is_finite() {
                continue;
            }
            let mut n = n / len;
            if n.dot(&intrinsics.unproject(x as f64, y as f64)) > 0.0 {
                n = -n;
            }
            normals.set(x, y, [n.x, n.y, n.z]);
            valid.set(x, y, true);
        }
    }
    DepthNormals { normals, valid }
}

/// Blended contributor normals together with the depth-gradient normals.
pub fn render_normal(bundle: &RenderBundle, sigma: f64) -> (Image, DepthNormals) {
    (
        bundle.normal.clone(),
        depth_normals(&bundle.d_alpha, &bundle.alpha, &bundle.intrinsics, sigma),
    )
}

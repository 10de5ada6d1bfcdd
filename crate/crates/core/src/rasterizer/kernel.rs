//! Per-view primitive preparation, tile binning and the per-pixel hit kernel
//! shared by the forward and backward passes.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::RenderOptions;
use crate::camera::CameraView;
use crate::geometry::{disk_screen_bounds, DEGENERATE_EPS};
use crate::scene::ObjectGaussian;
use crate::sh;

pub const TILE: usize = 16;

/// Transmittance below which compositing stops.
pub(crate) const T_EPS: f64 = 1e-10;

/// A primitive prepared for one camera.
#[derive(Clone, Debug)]
pub(crate) struct Projected {
    pub id: u32,
    /// Rows map `(u, v, 1)` to screen-homogeneous `(x w, y w, w)`.
    pub t: Matrix3<f64>,
    pub mu2: [f64; 2],
    pub center_cam: Vector3<f64>,
    pub alpha: f64,
    pub color: [f64; 3],
    pub normal: Vector3<f64>,
    pub flip: f64,
    pub view_dir: Vector3<f64>,
    pub view_dist: f64,
    pub sh_count: usize,
    /// Inclusive-exclusive pixel ranges `[x0, x1) x [y0, y1)`.
    pub bbox: [usize; 4],
}

impl Projected {
    #[inline]
    pub fn depth(&self) -> f64 {
        self.center_cam.z
    }
}

/// Geometry of one pixel/primitive evaluation.
#[derive(Clone, Copy, Debug)]
pub(crate) struct HitGeom {
    /// Truncated kernel value.
    pub g: f64,
    /// `d g / d rho` is `-slope / 2`.
    pub slope: f64,
    pub depth: f64,
    /// True when the tangent-plane Gaussian wins the max; false for the
    /// screen-space low-pass term.
    pub object: bool,
    pub u: f64,
    pub v: f64,
    pub p: Vector3<f64>,
    pub hu: Vector3<f64>,
    pub hv: Vector3<f64>,
}

#[inline]
pub(crate) fn eval_hit(sp: &Projected, x: f64, y: f64, radius: f64, floor: f64) -> HitGeom {
    let t0 = sp.t.row(0).transpose();
    let t1 = sp.t.row(1).transpose();
    let t2 = sp.t.row(2).transpose();
    let hu = t2 * x - t0;
    let hv = t2 * y - t1;
    let p = hu.cross(&hv);
    let dx = x - sp.mu2[0];
    let dy = y - sp.mu2[1];
    let rho2 = (dx * dx + dy * dy) / (radius * radius);
    let (mut u, mut v, mut rho3, mut d_obj) = (0.0, 0.0, f64::INFINITY, 0.0);
    if p.z.abs() >= DEGENERATE_EPS && p.z.is_finite() {
        u = p.x / p.z;
        v = p.y / p.z;
        rho3 = u * u + v * v;
        d_obj = t2.x * u + t2.y * v + t2.z;
    }
    let norm = 1.0 / (1.0 - floor);
    if rho3 <= rho2 {
        let raw = (-0.5 * rho3).exp();
        HitGeom {
            g: (raw - floor) * norm,
            slope: raw * norm,
            depth: d_obj,
            object: true,
            u,
            v,
            p,
            hu,
            hv,
        }
    } else {
        let raw = (-0.5 * rho2).exp();
        HitGeom {
            g: (raw - floor) * norm,
            slope: raw * norm,
            depth: sp.center_cam.z,
            object: false,
            u,
            v,
            p,
            hu,
            hv,
        }
    }
}

pub(crate) struct Prepared {
    /// Visible primitives sorted front to back by center depth, then id.
    pub proj: Vec<Projected>,
    /// Per tile, indices into `proj` in compositing order.
    pub tiles: Vec<Vec<u32>>,
    pub tiles_x: usize,
}

impl Prepared {
    pub fn tile_rect(&self, tile: usize, width: usize, height: usize) -> [usize; 4] {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        [
            tx * TILE,
            ((tx + 1) * TILE).min(width),
            ty * TILE,
            ((ty + 1) * TILE).min(height),
        ]
    }
}

fn project_one(
    id: usize,
    scene: &ObjectGaussian,
    camera: &CameraView,
    kmat: &Matrix3<f64>,
    cam_center: &Vector3<f64>,
    opts: &RenderOptions,
) -> Option<Projected> {
    let p = &scene.primitives[id];
    let alpha = p.opacity();
    if !(alpha > 0.0) {
        return None;
    }
    let center_cam = camera.to_camera(&p.center);
    if center_cam.z <= opts.near_plane {
        return None;
    }
    let r = &camera.rotation;
    let col0 = kmat * (r * (p.tangent_u * p.scale[0]));
    let col1 = kmat * (r * (p.tangent_v * p.scale[1]));
    let col2 = kmat * center_cam;
    let t = Matrix3::from_columns(&[col0, col1, col2]);
    let mu2 = [col2.x / col2.z, col2.y / col2.z];

    let rho_max = opts.cutoff_sigma * opts.cutoff_sigma;
    let (w, h) = (camera.width as f64, camera.height as f64);
    let full = [0.0, w - 1.0, 0.0, h - 1.0];
    let obj = disk_screen_bounds(&t, rho_max).unwrap_or(full);
    let sr = opts.lowpass_radius * rho_max.sqrt();
    let bb = [
        obj[0].min(mu2[0] - sr) - 1.0,
        obj[1].max(mu2[0] + sr) + 1.0,
        obj[2].min(mu2[1] - sr) - 1.0,
        obj[3].max(mu2[1] + sr) + 1.0,
    ];
    if bb[1] < 0.0 || bb[3] < 0.0 || bb[0] > w - 1.0 || bb[2] > h - 1.0 {
        return None;
    }
    let bbox = [
        bb[0].max(0.0).ceil() as usize,
        (bb[1].min(w - 1.0).floor() as usize + 1).min(camera.width),
        bb[2].max(0.0).ceil() as usize,
        (bb[3].min(h - 1.0).floor() as usize + 1).min(camera.height),
    ];
    if bbox[0] >= bbox[1] || bbox[2] >= bbox[3] {
        return None;
    }

    let n_world = p.normal();
    let n_cam = r * n_world;
    let flip = if n_cam.dot(&center_cam) > 0.0 { -1.0 } else { 1.0 };
    let to_center = p.center - cam_center;
    let view_dist = to_center.norm();
    let view_dir = if view_dist > 0.0 {
        to_center / view_dist
    } else {
        Vector3::z()
    };
    let sh_count = p.color.len().min(sh::coeff_count(opts.sh_degree.min(sh::MAX_DEGREE)));
    let color = sh::eval(&p.color[..sh_count], &view_dir);
    Some(Projected {
        id: id as u32,
        t,
        mu2,
        center_cam,
        alpha,
        color,
        normal: n_cam * flip,
        flip,
        view_dir,
        view_dist,
        sh_count,
        bbox,
    })
}

pub(crate) fn prepare(scene: &ObjectGaussian, camera: &CameraView, opts: &RenderOptions) -> Prepared {
    let kmat = camera.intrinsics.matrix();
    let cam_center = camera.center();
    let mut proj: Vec<Projected> = (0..scene.primitives.len())
        .into_par_iter()
        .filter_map(|i| project_one(i, scene, camera, &kmat, &cam_center, opts))
        .collect();
    proj.sort_by(|a, b| a.depth().total_cmp(&b.depth()).then(a.id.cmp(&b.id)));

    let tiles_x = camera.width.div_ceil(TILE);
    let tiles_y = camera.height.div_ceil(TILE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (i, sp) in proj.iter().enumerate() {
        let tx0 = sp.bbox[0] / TILE;
        let tx1 = (sp.bbox[1] - 1) / TILE;
        let ty0 = sp.bbox[2] / TILE;
        let ty1 = (sp.bbox[3] - 1) / TILE;
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tiles[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    Prepared { proj, tiles, tiles_x }
}

/// One primitive's contribution at a pixel.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Hit {
    /// Position in the tile list.
    pub slot: u32,
    /// Index into `Prepared::proj`.
    pub proj: u32,
    pub a: f64,
    pub t: f64,
    pub weight: f64,
    pub geom: HitGeom,
}

/// Front-to-back compositing of one pixel; returns the final transmittance.
#[inline]
pub(crate) fn pixel_hits(
    prep: &Prepared,
    list: &[u32],
    px: usize,
    py: usize,
    opts: &RenderOptions,
    hits: &mut Vec<Hit>,
) -> f64 {
    hits.clear();
    let floor = opts.kernel_floor();
    let (x, y) = (px as f64, py as f64);
    let mut trans = 1.0;
    for (slot, &pi) in list.iter().enumerate() {
        let sp = &prep.proj[pi as usize];
        if px < sp.bbox[0] || px >= sp.bbox[1] || py < sp.bbox[2] || py >= sp.bbox[3] {
            continue;
        }
        let geom = eval_hit(sp, x, y, opts.lowpass_radius, floor);
        if !(geom.g > 0.0) || !(geom.depth > opts.near_plane) {
            continue;
        }
        let a = sp.alpha * geom.g;
        hits.push(Hit {
            slot: slot as u32,
            proj: pi,
            a,
            t: trans,
            weight: trans * a,
            geom,
        });
        trans *= 1.0 - a;
        if trans <= T_EPS {
            break;
        }
    }
    trans
}

/// Indices (into `hits`) of the `cap` highest-weight hits, in compositing order.
pub(crate) fn captured(hits: &[Hit], cap: usize, out: &mut Vec<usize>) {
    out.clear();
    out.extend(0..hits.len());
    if hits.len() > cap {
        out.sort_by(|&a, &b| hits[b].weight.total_cmp(&hits[a].weight).then(a.cmp(&b)));
        out.truncate(cap);
        out.sort_unstable();
    }
}

/// Alpha-blended depth: weight-normalized mean when accumulated alpha reaches
/// `sigma`, otherwise the farthest contributor. Returns the depth and, for the
/// fallback branch, the index of the selected hit.
pub(crate) fn blended_depth(hits: &[Hit], sigma: f64) -> (f64, f64, Option<usize>) {
    if hits.is_empty() {
        return (f64::NAN, 0.0, None);
    }
    let acc: f64 = hits.iter().map(|h| h.weight).sum();
    if acc >= sigma {
        let num: f64 = hits.iter().map(|h| h.weight * h.geom.depth).sum();
        (num / acc, acc, None)
    } else {
        let mut best = 0;
        for (i, h) in hits.iter().enumerate() {
            if h.geom.depth > hits[best].geom.depth {
                best = i;
            }
        }
        (hits[best].geom.depth, acc, Some(best))
    }
}

/// Index of the max-weight hit (first on ties).
pub(crate) fn peak_hit(hits: &[Hit]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, h) in hits.iter().enumerate() {
        match best {
            Some(b) if hits[b].weight >= h.weight => {}
            _ => best = Some(i),
        }
    }
    best
}

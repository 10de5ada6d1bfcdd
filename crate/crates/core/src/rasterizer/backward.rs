//! Reverse-mode pass through the rasterizer.
//!
//! The backward pass re-runs the per-pixel hit kernel (bit-identical to the
//! forward pass), consumes per-pixel upstream gradients and accumulates
//! gradients into per-primitive screen-space quantities (the 3x3 splat map,
//! projected center, center depth, color, normal, opacity). Those are
//! reduced over tiles in a fixed order and then mapped to the optimizer's
//! parameters.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::kernel::{blended_depth, captured, pixel_hits, prepare, Prepared};
use super::RenderOptions;
use crate::camera::CameraView;
use crate::error::Result;
use crate::raster::{Image, ScalarMap};
use crate::scene::ObjectGaussian;
use crate::sh;

/// Upstream gradients for one rendered view.
pub struct BackwardInputs<'a> {
    /// `dL/dcolor` per pixel.
    pub color: &'a Image,
    /// `dL/d d_alpha` per pixel.
    pub depth: Option<&'a ScalarMap>,
    /// Multiplier of each pixel's `sum_ij w_i w_j |d_i - d_j|`.
    pub geo_scale: f64,
    /// Per-pixel multiplier of `sum_i w_i (1 - n_i . phi)` and the depth
    /// normals `phi`.
    pub normal: Option<(&'a ScalarMap, &'a Image)>,
}

/// Gradients w.r.t. the optimizer parameterization: centers, log-scales,
/// opacity logits, a local frame rotation vector and SH coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGrad {
    pub center: Vec<Vector3<f64>>,
    pub log_scale: Vec<[f64; 2]>,
    pub opacity_logit: Vec<f64>,
    pub rotation: Vec<Vector3<f64>>,
    pub color: Vec<Vec<[f64; 3]>>,
}

impl SceneGrad {
    pub fn zeros(scene: &ObjectGaussian) -> Self {
        let n = scene.len();
        Self {
            center: vec![Vector3::zeros(); n],
            log_scale: vec![[0.0; 2]; n],
            opacity_logit: vec![0.0; n],
            rotation: vec![Vector3::zeros(); n],
            color: scene.primitives.iter().map(|p| vec![[0.0; 3]; p.color.len()]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.center.len()
    }

    pub fn is_empty(&self) -> bool {
        self.center.is_empty()
    }

    pub fn add_assign(&mut self, other: &SceneGrad) {
        for i in 0..self.len() {
            self.center[i] += other.center[i];
            self.rotation[i] += other.rotation[i];
            self.opacity_logit[i] += other.opacity_logit[i];
            for k in 0..2 {
                self.log_scale[i][k] += other.log_scale[i][k];
            }
            for (a, b) in self.color[i].iter_mut().zip(&other.color[i]) {
                for ch in 0..3 {
                    a[ch] += b[ch];
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for i in 0..self.len() {
            self.center[i] *= factor;
            self.rotation[i] *= factor;
            self.opacity_logit[i] *= factor;
            for k in 0..2 {
                self.log_scale[i][k] *= factor;
            }
            for a in self.color[i].iter_mut() {
                for v in a.iter_mut() {
                    *v *= factor;
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.center.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.rotation.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.opacity_logit.iter().all(|x| x.is_finite())
            && self.log_scale.iter().flatten().all(|x| x.is_finite())
            && self.color.iter().flatten().flatten().all(|x| x.is_finite())
    }
}

#[derive(Clone, Copy, Debug)]
struct ProjGrad {
    t: Matrix3<f64>,
    mu2: [f64; 2],
    depth: f64,
    color: [f64; 3],
    normal: Vector3<f64>,
    alpha: f64,
}

impl ProjGrad {
    const ZERO: ProjGrad = ProjGrad {
        t: Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
        mu2: [0.0; 2],
        depth: 0.0,
        color: [0.0; 3],
        normal: Vector3::new(0.0, 0.0, 0.0),
        alpha: 0.0,
    };

    fn add(&mut self, o: &ProjGrad) {
        self.t += o.t;
        self.mu2[0] += o.mu2[0];
        self.mu2[1] += o.mu2[1];
        self.depth += o.depth;
        for ch in 0..3 {
            self.color[ch] += o.color[ch];
        }
        self.normal += o.normal;
        self.alpha += o.alpha;
    }
}

fn tile_backward(
    prep: &Prepared,
    tile: usize,
    camera: &CameraView,
    opts: &RenderOptions,
    inputs: &BackwardInputs,
) -> Vec<ProjGrad> {
    let (w, h) = (camera.width, camera.height);
    let rect = prep.tile_rect(tile, w, h);
    let list = &prep.tiles[tile];
    let mut acc = vec![ProjGrad::ZERO; list.len()];
    let mut hits = Vec::new();
    let mut keep = Vec::new();
    let mut gw: Vec<f64> = Vec::new();
    let mut gd: Vec<f64> = Vec::new();
    let r2 = opts.lowpass_radius * opts.lowpass_radius;
    let bg = opts.background;

    for py in rect[2]..rect[3] {
        for px in rect[0]..rect[1] {
            let _ = pixel_hits(prep, list, px, py, opts, &mut hits);
            if hits.is_empty() {
                continue;
            }
            let n = hits.len();
            let gc = *inputs.color.get(px, py);
            let g_depth = inputs.depth.map_or(0.0, |d| *d.get(px, py));
            gw.clear();
            gw.resize(n, 0.0);
            gd.clear();
            gd.resize(n, 0.0);

            for (k, hit) in hits.iter().enumerate() {
                let c = &prep.proj[hit.proj as usize].color;
                gw[k] = gc[0] * c[0] + gc[1] * c[1] + gc[2] * c[2];
                let slot = &mut acc[hit.slot as usize];
                for ch in 0..3 {
                    slot.color[ch] += gc[ch] * hit.weight;
                }
            }

            if g_depth != 0.0 {
                let (d, total, fallback) = blended_depth(&hits, opts.sigma);
                match fallback {
                    None => {
                        for (k, hit) in hits.iter().enumerate() {
                            gw[k] += g_depth * (hit.geom.depth - d) / total;
                            gd[k] += g_depth * hit.weight / total;
                        }
                    }
                    Some(k) => gd[k] += g_depth,
                }
            }

            let normal_w = inputs.normal.map_or(0.0, |(weights, _)| *weights.get(px, py));
            if inputs.geo_scale != 0.0 || normal_w != 0.0 {
                captured(&hits, opts.contributor_cap, &mut keep);
                if inputs.geo_scale != 0.0 {
                    let s = 2.0 * inputs.geo_scale;
                    for &i in keep.iter() {
                        let (mut s1, mut s2) = (0.0, 0.0);
                        let di = hits[i].geom.depth;
                        for &j in keep.iter() {
                            let diff = di - hits[j].geom.depth;
                            s1 += hits[j].weight * diff.abs();
                            if diff > 0.0 {
                                s2 += hits[j].weight;
                            } else if diff < 0.0 {
                                s2 -= hits[j].weight;
                            }
                        }
                        gw[i] += s * s1;
                        gd[i] += s * hits[i].weight * s2;
                    }
                }
                if normal_w != 0.0 {
                    let phi = inputs.normal.expect("normal inputs").1.get(px, py);
                    let phi = Vector3::new(phi[0], phi[1], phi[2]);
                    for &i in keep.iter() {
                        let hit = &hits[i];
                        let nrm = &prep.proj[hit.proj as usize].normal;
                        gw[i] += normal_w * (1.0 - nrm.dot(&phi));
                        acc[hit.slot as usize].normal -= phi * (normal_w * hit.weight);
                    }
                }
            }

            // Back to front through the transmittance chain.
            let (x, y) = (px as f64, py as f64);
            let mut g_trans = gc[0] * bg[0] + gc[1] * bg[1] + gc[2] * bg[2];
            for k in (0..n).rev() {
                let hit = &hits[k];
                let ga = (gw[k] - g_trans) * hit.t;
                g_trans = gw[k] * hit.a + g_trans * (1.0 - hit.a);

                let sp = &prep.proj[hit.proj as usize];
                let geom = &hit.geom;
                let slot = &mut acc[hit.slot as usize];
                slot.alpha += ga * geom.g;
                let gg = ga * sp.alpha;
                let gdep = gd[k];
                if geom.object {
                    let t2 = sp.t.row(2);
                    let gu = -gg * geom.u * geom.slope + gdep * t2[0];
                    let gv = -gg * geom.v * geom.slope + gdep * t2[1];
                    let pz = geom.p.z;
                    let gp = Vector3::new(gu / pz, gv / pz, -(gu * geom.u + gv * geom.v) / pz);
                    let ghu = geom.hv.cross(&gp);
                    let ghv = gp.cross(&geom.hu);
                    for c in 0..3 {
                        slot.t[(0, c)] -= ghu[c];
                        slot.t[(1, c)] -= ghv[c];
                        slot.t[(2, c)] += x * ghu[c] + y * ghv[c];
                    }
                    slot.t[(2, 0)] += gdep * geom.u;
                    slot.t[(2, 1)] += gdep * geom.v;
                    slot.t[(2, 2)] += gdep;
                } else {
                    let s = gg * geom.slope / r2;
                    slot.mu2[0] += s * (x - sp.mu2[0]);
                    slot.mu2[1] += s * (y - sp.mu2[1]);
                    slot.depth += gdep;
                }
            }
        }
    }
    acc
}

/// Backpropagates per-pixel upstream gradients to primitive parameters.
pub fn render_backward(
    scene: &ObjectGaussian,
    camera: &CameraView,
    opts: &RenderOptions,
    inputs: &BackwardInputs,
) -> Result<SceneGrad> {
    camera.validate()?;
    opts.validate()?;
    inputs.color.ensure_dims(camera.width, camera.height)?;
    if let Some(d) = inputs.depth {
        d.ensure_dims(camera.width, camera.height)?;
    }
    let prep = prepare(scene, camera, opts);
    let per_tile: Vec<Vec<ProjGrad>> = (0..prep.tiles.len())
        .into_par_iter()
        .map(|tile| tile_backward(&prep, tile, camera, opts, inputs))
        .collect();

    let mut proj_grad = vec![ProjGrad::ZERO; prep.proj.len()];
    for (tile, local) in per_tile.iter().enumerate() {
        for (slot, &pi) in prep.tiles[tile].iter().enumerate() {
            proj_grad[pi as usize].add(&local[slot]);
        }
    }

    let mut grad = SceneGrad::zeros(scene);
    let kt = camera.intrinsics.matrix().transpose();
    let rt = camera.rotation.transpose();
    let (fx, fy) = (camera.intrinsics.fx, camera.intrinsics.fy);
    for (sp, g) in prep.proj.iter().zip(&proj_grad) {
        let id = sp.id as usize;
        let p = &scene.primitives[id];

        let q0 = rt * (kt * g.t.column(0));
        let q1 = rt * (kt * g.t.column(1));
        let q2 = rt * (kt * g.t.column(2));
        let mut g_center = q2;
        let g_tu = q0 * p.scale[0];
        let g_tv = q1 * p.scale[1];
        grad.log_scale[id] = [q0.dot(&p.tangent_u) * p.scale[0], q1.dot(&p.tangent_v) * p.scale[1]];

        let c = &sp.center_cam;
        let g_cam = Vector3::new(
            g.mu2[0] * fx / c.z,
            g.mu2[1] * fy / c.z,
            -(g.mu2[0] * fx * c.x + g.mu2[1] * fy * c.y) / (c.z * c.z) + g.depth,
        );
        g_center += rt * g_cam;

        let (basis, dbasis) = sh::basis(&sp.view_dir, sp.sh_count);
        for k in 0..sp.sh_count {
            for ch in 0..3 {
                grad.color[id][k][ch] = basis[k] * g.color[ch];
            }
        }
        if sp.sh_count > 1 {
            let mut g_dir = Vector3::zeros();
            for k in 1..sp.sh_count {
                let s: f64 = (0..3).map(|ch| p.color[k][ch] * g.color[ch]).sum();
                g_dir += Vector3::new(dbasis[k][0], dbasis[k][1], dbasis[k][2]) * s;
            }
            let dir = &sp.view_dir;
            g_center += (g_dir - dir * dir.dot(&g_dir)) / sp.view_dist;
        }

        let g_tw = rt * g.normal * sp.flip;
        grad.rotation[id] = p.tangent_u.cross(&g_tu) + p.tangent_v.cross(&g_tv) + p.normal().cross(&g_tw);
        grad.opacity_logit[id] = g.alpha * sp.alpha * (1.0 - sp.alpha);
        grad.center[id] = g_center;
    }
    Ok(grad)
}

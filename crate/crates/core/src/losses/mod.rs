//! Scalar training objectives over render outputs and their gradients with
//! respect to the rendered quantities.
//!
//! Every loss is a mean over its pixel support, so the weights transfer
//! across image sizes.

mod ssim;

use nalgebra::Vector3;

use crate::error::{invalid, Error, Result};
use crate::raster::{Image, Mask, ScalarMap};
use crate::rasterizer::{Contributors, DepthNormals, RenderBundle};

pub use ssim::{WINDOW as SSIM_WINDOW, WINDOW_SIGMA as SSIM_SIGMA};

/// Weights of the individual loss terms.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_geo: f64,
    pub lambda_normal: f64,
    pub dssim_mix: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_geo: 1e4,
            lambda_normal: 0.005,
            dssim_mix: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda_geo) || !ok(self.lambda_normal) || !ok(self.dssim_mix) || self.dssim_mix > 1.0 {
            return Err(invalid(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }
}

/// Which photometric term supervises the current iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// A captured view, supervised by the image loss.
    Given,
    /// A warped view, supervised by the warp loss.
    Synthetic,
}

/// Which regularizers are switched on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ActiveTerms {
    pub geo: bool,
    pub normal: bool,
}

impl ActiveTerms {
    pub fn at(iteration: usize, geo_start: usize, normal_start: usize) -> Self {
        Self {
            geo: iteration >= geo_start,
            normal: iteration >= normal_start,
        }
    }
}

/// Raw (unweighted) values of each loss term.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub image: f64,
    pub warp: f64,
    pub geo: f64,
    pub normal: f64,
}

/// Weighted sum of the terms selected by `phase` and `active`.
pub fn total_loss(parts: &LossParts, weights: &LossWeights, phase: Phase, active: ActiveTerms) -> f64 {
    let photometric = match phase {
        Phase::Given => parts.image,
        Phase::Synthetic => parts.warp,
    };
    let mut total = photometric;
    if active.geo {
        total += weights.lambda_geo * parts.geo;
    }
    if active.normal {
        total += weights.lambda_normal * parts.normal;
    }
    total
}

fn check_pair(a: &Image, b: &Image, mask: &Mask) -> Result<()> {
    let (w, h) = a.dims();
    b.ensure_dims(w, h)?;
    mask.ensure_dims(w, h)?;
    Ok(())
}

fn masked_l1(a: &Image, b: &Image, mask: &Mask, grad: Option<&mut Image>) -> f64 {
    let count = mask.count();
    if count == 0 {
        return 0.0;
    }
    let norm = 1.0 / (3 * count) as f64;
    let mut sum = 0.0;
    let mut grad = grad;
    for i in 0..a.len() {
        if !mask.as_slice()[i] {
            continue;
        }
        let (pa, pb) = (a.as_slice()[i], b.as_slice()[i]);
        for c in 0..3 {
            let d = pa[c] - pb[c];
            sum += d.abs();
            if let Some(g) = grad.as_deref_mut() {
                g.as_mut_slice()[i][c] += norm * sign(d);
            }
        }
    }
    sum * norm
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `(1 - mix) * L1 + mix * (1 - SSIM) / 2` over the masked pixels.
pub fn image_loss(rendered: &Image, target: &Image, mask: &Mask, dssim_mix: f64) -> Result<f64> {
    image_loss_impl(rendered, target, mask, dssim_mix, false).map(|(v, _)| v)
}

/// Image loss together with its gradient w.r.t. `rendered`.
pub fn image_loss_grad(rendered: &Image, target: &Image, mask: &Mask, dssim_mix: f64) -> Result<(f64, Image)> {
    image_loss_impl(rendered, target, mask, dssim_mix, true).map(|(v, g)| (v, g.expect("gradient requested")))
}

fn image_loss_impl(
    rendered: &Image,
    target: &Image,
    mask: &Mask,
    dssim_mix: f64,
    want_grad: bool,
) -> Result<(f64, Option<Image>)> {
    check_pair(rendered, target, mask)?;
    if mask.count() == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if !(0.0..=1.0).contains(&dssim_mix) {
        return Err(invalid(format!("dssim_mix {dssim_mix} outside [0, 1]")));
    }
    let (w, h) = rendered.dims();
    let mut grad = want_grad.then(|| Image::filled(w, h, [0.0; 3]));
    let l1 = masked_l1(rendered, target, mask, grad.as_mut());
    if dssim_mix == 0.0 {
        return Ok((l1, grad));
    }
    let (s, sg) = ssim::masked_ssim(rendered, target, mask, want_grad);
    let value = (1.0 - dssim_mix) * l1 + dssim_mix * (1.0 - s) / 2.0;
    if let (Some(g), Some(sg)) = (grad.as_mut(), sg) {
        for (gp, sp) in g.as_mut_slice().iter_mut().zip(sg.as_slice()) {
            for c in 0..3 {
                gp[c] = (1.0 - dssim_mix) * gp[c] - 0.5 * dssim_mix * sp[c];
            }
        }
    }
    Ok((value.max(0.0), grad))
}

/// Warp loss value; `empty` flags an all-invalid validity mask.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarpLoss {
    pub value: f64,
    pub empty: bool,
}

/// L1 between a synthetic-view render and its warped target on `validity`.
pub fn warp_loss(rendered: &Image, warped: &Image, validity: &Mask) -> Result<WarpLoss> {
    check_pair(rendered, warped, validity)?;
    let empty = validity.count() == 0;
    if empty {
        log::warn!("warp loss evaluated on an empty validity mask");
    }
    Ok(WarpLoss {
        value: masked_l1(rendered, warped, validity, None),
        empty,
    })
}

/// Warp loss together with its gradient w.r.t. `rendered`.
pub fn warp_loss_grad(rendered: &Image, warped: &Image, validity: &Mask) -> Result<(WarpLoss, Image)> {
    check_pair(rendered, warped, validity)?;
    let (w, h) = rendered.dims();
    let mut g = Image::filled(w, h, [0.0; 3]);
    let empty = validity.count() == 0;
    let value = masked_l1(rendered, warped, validity, Some(&mut g));
    Ok((WarpLoss { value, empty }, g))
}

/// `sum_ij w_i w_j |d_i - d_j|` over one pixel's captured contributors.
pub fn geo_consistency_pixel(list: &[crate::rasterizer::Contributor]) -> f64 {
    let mut sum = 0.0;
    for a in list {
        for b in list {
            sum += a.weight * b.weight * (a.depth - b.depth).abs();
        }
    }
    sum
}

/// Geometric-consistency loss summed over pixels and divided by the pixel
/// count.
pub fn geo_consistency_loss(contributors: &Contributors) -> f64 {
    let n = contributors.num_pixels();
    if n == 0 {
        return 0.0;
    }
    (0..n)
        .map(|i| geo_consistency_pixel(contributors.pixel(i)))
        .sum::<f64>()
        / n as f64
}

fn normal_pixel(list: &[crate::rasterizer::Contributor], phi: &[f64; 3]) -> f64 {
    list.iter()
        .map(|c| c.weight * (1.0 - (c.normal[0] * phi[0] + c.normal[1] * phi[1] + c.normal[2] * phi[2])))
        .sum()
}

/// Normal-consistency loss averaged over pixels with a valid depth normal.
pub fn normal_consistency_loss(contributors: &Contributors, depth_normals: &DepthNormals) -> f64 {
    let valid = depth_normals.valid.as_slice();
    let count = depth_normals.valid.count();
    if count == 0 || contributors.num_pixels() != valid.len() {
        return 0.0;
    }
    let phi = depth_normals.normals.as_slice();
    let sum: f64 = (0..valid.len())
        .filter(|&i| valid[i])
        .map(|i| normal_pixel(contributors.pixel(i), &phi[i]))
        .sum();
    sum / count as f64
}

/// Upstream quantities needed to backpropagate a scaled normal loss through
/// the rasterizer.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalLossBackward {
    /// Per-pixel multiplier of `sum_i w_i (1 - n_i . phi)`.
    pub weights: ScalarMap,
    /// Depth normals used by the loss.
    pub phi: Image,
    /// Gradient w.r.t. the blended depth through `phi`.
    pub depth: ScalarMap,
}

/// Gradient plumbing for `scale * normal_consistency_loss(bundle)`.
pub fn normal_loss_backward(bundle: &RenderBundle, depth_normals: &DepthNormals, scale: f64) -> NormalLossBackward {
    let (w, h) = (bundle.width, bundle.height);
    let mut weights = ScalarMap::filled(w, h, 0.0);
    let mut depth = ScalarMap::filled(w, h, 0.0);
    let count = depth_normals.valid.count();
    if count == 0 {
        return NormalLossBackward {
            weights,
            phi: depth_normals.normals.clone(),
            depth,
        };
    }
    let wp = scale / count as f64;
    let intr = &bundle.intrinsics;
    let ray = |x: usize, y: usize| intr.unproject(x as f64, y as f64);
    for y in 0..h {
        for x in 0..w {
            if !*depth_normals.valid.get(x, y) {
                continue;
            }
            weights.set(x, y, wp);
            let list = bundle.contributors.pixel(bundle.pixel_index(x, y));
            let mut g_phi = Vector3::zeros();
            for c in list {
                g_phi -= Vector3::new(c.normal[0], c.normal[1], c.normal[2]) * (wp * c.weight);
            }
            let point = |xx: usize, yy: usize| ray(xx, yy) * *bundle.d_alpha.get(xx, yy);
            let a = point(x, y + 1) - point(x, y - 1);
            let b = point(x + 1, y) - point(x - 1, y);
            let v = a.cross(&b);
            let len = v.norm();
            let phi = depth_normals.normals.get(x, y);
            let phi = Vector3::new(phi[0], phi[1], phi[2]);
            let s = if phi.dot(&v) < 0.0 { -1.0 } else { 1.0 };
            let g_v = (g_phi - phi * phi.dot(&g_phi)) * (s / len);
            let g_a = b.cross(&g_v);
            let g_b = g_v.cross(&a);
            *depth.get_mut(x, y + 1) += g_a.dot(&ray(x, y + 1));
            *depth.get_mut(x, y - 1) -= g_a.dot(&ray(x, y - 1));
            *depth.get_mut(x + 1, y) += g_b.dot(&ray(x + 1, y));
            *depth.get_mut(x - 1, y) -= g_b.dot(&ray(x - 1, y));
        }
    }
    NormalLossBackward {
        weights,
        phi: depth_normals.normals.clone(),
        depth,
    }
}

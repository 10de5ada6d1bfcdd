//! Loss evaluation for one view and its analytic gradient.

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::losses::{
    geo_consistency_loss, image_loss_grad, normal_consistency_loss, normal_loss_backward, total_loss, warp_loss_grad,
    ActiveTerms, LossParts, LossWeights, Phase,
};
use crate::raster::{Image, Mask};
use crate::rasterizer::{
    depth_normals, render, render_backward, BackwardInputs, RenderBundle, RenderOptions, SceneGrad,
};
use crate::scene::ObjectGaussian;

/// Supervision for one iteration.
#[derive(Clone, Copy, Debug)]
pub enum Target<'a> {
    /// A captured view: image loss over `mask`.
    Given { image: &'a Image, mask: &'a Mask },
    /// A warped view: L1 over the warp validity mask.
    Synthetic { image: &'a Image, validity: &'a Mask },
}

impl Target<'_> {
    pub fn phase(&self) -> Phase {
        match self {
            Target::Given { .. } => Phase::Given,
            Target::Synthetic { .. } => Phase::Synthetic,
        }
    }
}

/// Loss value, its parts and the gradient w.r.t. every primitive parameter.
#[derive(Clone, Debug)]
pub struct GradientReport {
    pub loss: f64,
    pub parts: LossParts,
    pub grad: SceneGrad,
    /// Norm of the loss gradient w.r.t. each primitive's projected center,
    /// in pixels; zero for primitives that were not projected.
    pub screen_grad: Vec<f64>,
    /// Whether each primitive landed in front of the camera.
    pub visible: Vec<bool>,
    /// Worst relative disagreement with finite differences, when checked.
    pub max_rel_error: Option<f64>,
}

/// Loss of `scene` seen from `camera` against `target`.
pub fn evaluate_loss(
    scene: &ObjectGaussian,
    camera: &CameraView,
    target: Target,
    opts: &RenderOptions,
    weights: &LossWeights,
    active: ActiveTerms,
) -> Result<(f64, LossParts)> {
    let bundle = render(scene, camera, opts)?;
    let (parts, _) = loss_parts(&bundle, target, opts, weights, active, false)?;
    Ok((total_loss(&parts, weights, target.phase(), active), parts))
}

struct Upstream {
    color: Image,
    normal: Option<crate::losses::NormalLossBackward>,
    geo_scale: f64,
}

fn loss_parts(
    bundle: &RenderBundle,
    target: Target,
    opts: &RenderOptions,
    weights: &LossWeights,
    active: ActiveTerms,
    want_grad: bool,
) -> Result<(LossParts, Option<Upstream>)> {
    let mut parts = LossParts::default();
    let color = match target {
        Target::Given { image, mask } => {
            let (v, g) = image_loss_grad(&bundle.color, image, mask, weights.dssim_mix)?;
            parts.image = v;
            g
        }
        Target::Synthetic { image, validity } => {
            let (v, g) = warp_loss_grad(&bundle.color, image, validity)?;
            parts.warp = v.value;
            g
        }
    };
    parts.geo = geo_consistency_loss(&bundle.contributors);
    let dn = depth_normals(&bundle.d_alpha, &bundle.alpha, &bundle.intrinsics, opts.sigma);
    parts.normal = normal_consistency_loss(&bundle.contributors, &dn);
    if !want_grad {
        return Ok((parts, None));
    }
    let pixels = (bundle.width * bundle.height).max(1) as f64;
    let geo_scale = if active.geo { weights.lambda_geo / pixels } else { 0.0 };
    let normal = active
        .normal
        .then(|| normal_loss_backward(bundle, &dn, weights.lambda_normal));
    Ok((
        parts,
        Some(Upstream {
            color,
            normal,
            geo_scale,
        }),
    ))
}

fn non_finite_detail(bundle: &RenderBundle) -> String {
    for y in 0..bundle.height {
        for x in 0..bundle.width {
            let c = bundle.color.get(x, y);
            if !c.iter().all(|v| v.is_finite()) || !bundle.alpha.get(x, y).is_finite() {
                let ids: Vec<u32> = bundle
                    .contributors
                    .pixel(bundle.pixel_index(x, y))
                    .iter()
                    .map(|c| c.id)
                    .collect();
                return format!("non-finite render at pixel ({x}, {y}), contributors {ids:?}");
            }
        }
    }
    "non-finite loss with a finite render".to_string()
}

/// Total loss for one view and its analytic gradient.
pub fn compute_gradients(
    scene: &ObjectGaussian,
    camera: &CameraView,
    target: Target,
    opts: &RenderOptions,
    weights: &LossWeights,
    active: ActiveTerms,
    iteration: usize,
) -> Result<GradientReport> {
    let bundle = render(scene, camera, opts)?;
    let (parts, up) = loss_parts(&bundle, target, opts, weights, active, true)?;
    let loss = total_loss(&parts, weights, target.phase(), active);
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            iteration,
            detail: non_finite_detail(&bundle),
        });
    }
    let up = up.expect("upstream gradients requested");
    let inputs = BackwardInputs {
        color: &up.color,
        depth: up.normal.as_ref().map(|n| &n.depth),
        geo_scale: up.geo_scale,
        normal: up.normal.as_ref().map(|n| (&n.weights, &n.phi)),
    };
    let grad = render_backward(scene, camera, opts, &inputs)?;
    if !grad.is_finite() {
        let bad = (0..grad.len())
            .find(|&i| {
                !(grad.center[i].iter().all(|v| v.is_finite())
                    && grad.rotation[i].iter().all(|v| v.is_finite())
                    && grad.opacity_logit[i].is_finite()
                    && grad.log_scale[i].iter().all(|v| v.is_finite())
                    && grad.color[i].iter().flatten().all(|v| v.is_finite()))
            })
            .unwrap_or(0);
        return Err(Error::NonFinite {
            iteration,
            detail: format!("non-finite gradient for primitive {bad}"),
        });
    }
    let (screen_grad, visible) = screen_statistics(scene, camera, &grad);
    Ok(GradientReport {
        loss,
        parts,
        grad,
        screen_grad,
        visible,
        max_rel_error: None,
    })
}

/// Pixel-space gradient norm of each primitive's projected center, derived
/// from the world-space center gradient.
fn screen_statistics(scene: &ObjectGaussian, camera: &CameraView, grad: &SceneGrad) -> (Vec<f64>, Vec<bool>) {
    let f = 0.5 * (camera.intrinsics.fx + camera.intrinsics.fy);
    let mut stat = vec![0.0; scene.len()];
    let mut visible = vec![false; scene.len()];
    for (i, p) in scene.primitives.iter().enumerate() {
        let c = camera.to_camera(&p.center);
        if c.z <= 0.0 {
            continue;
        }
        visible[i] = true;
        let g = camera.rotation * grad.center[i];
        stat[i] = (g.x * g.x + g.y * g.y).sqrt() * c.z / f;
    }
    (stat, visible)
}

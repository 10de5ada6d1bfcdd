//! The training loop: Adam updates over given and synthetic views with the
//! loss activation schedule, density control and online floater pruning.

use std::fmt::Write as _;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::density::{
    adaptive_density_control, online_floater_prune, prune_unseen, DensifyThresholds, FloaterPruneOptions, GradStats,
};
use super::objective::{compute_gradients, Target};
use crate::camera::CameraView;
use crate::error::{invalid, Error, Result};
use crate::losses::{ActiveTerms, LossWeights, Phase};
use crate::raster::{Image, Mask};
use crate::rasterizer::{masked_depth, render, RenderOptions, SceneGrad};
use crate::scene::{logit, ObjectGaussian};
use crate::view_synthesis::{about_pivot, sample_pose_perturbation_with, warp_view, PerturbationParams};

/// Per-group Adam learning rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    /// Initial center rate, multiplied by the spatial scale.
    pub position_init: f64,
    /// Final center rate (log-linear decay), multiplied by the spatial scale.
    pub position_final: f64,
    pub opacity: f64,
    /// Rate of the log-scales.
    pub scale: f64,
    /// Rate of the base color; higher SH bands use `color / color_rest_divisor`.
    pub color: f64,
    pub color_rest_divisor: f64,
    /// Rate of the local frame rotation vector.
    pub rotation: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position_init: 1.6e-4,
            position_final: 1.6e-6,
            opacity: 5e-2,
            scale: 5e-3,
            color: 2.5e-3,
            color_rest_divisor: 20.0,
            rotation: 1e-3,
        }
    }
}

impl LearningRates {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.position_init,
            self.position_final,
            self.opacity,
            self.scale,
            self.color,
            self.color_rest_divisor,
            self.rotation,
        ];
        if !all.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(invalid("learning rates must be positive"));
        }
        Ok(())
    }

    /// Center rate at `iteration` of `total` (before spatial scaling).
    pub fn position_at(&self, iteration: usize, total: usize) -> f64 {
        let t = if total == 0 {
            0.0
        } else {
            (iteration as f64 / total as f64).clamp(0.0, 1.0)
        };
        (self.position_init.ln() * (1.0 - t) + self.position_final.ln() * t).exp()
    }
}

/// Iteration counts, activation points and update settings. Iterations are
/// numbered from 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub total_iters: usize,
    /// First iteration with the geometric-consistency loss.
    pub geo_start: usize,
    /// First iteration with the normal loss.
    pub normal_start: usize,
    /// Iteration at which synthetic views are created.
    pub warp_create_iter: usize,
    /// Fraction of the iterations from `warp_create_iter` on that alternate
    /// between given and synthetic views.
    pub warp_fraction: f64,
    pub synthetic_per_view: usize,
    pub densify_from: usize,
    pub densify_interval: usize,
    pub densify_stop: usize,
    /// Opacities are clamped to 0.01 every this many iterations while
    /// densifying; 0 (the default) disables.
    pub opacity_reset_interval: usize,
    pub prune_from: usize,
    /// Online floater pruning period; 0 disables.
    pub prune_interval: usize,
    pub prune_stop: usize,
    /// Primitives never reaching this blend weight in any given view are
    /// dropped at the end.
    pub unseen_min_weight: Option<f64>,
    /// SH degree used during training.
    pub sh_degree: usize,
    /// Scale of the center learning rate; derived from the camera spread
    /// when absent.
    pub spatial_scale: Option<f64>,
    /// Given views are supervised over the full frame against the image
    /// composited on the background color outside the mask.
    pub supervise_background: bool,
    pub lr: LearningRates,
    pub densify: DensifyThresholds,
    pub floater: FloaterPruneOptions,
    pub perturbation: PerturbationParams,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            total_iters: 30_000,
            geo_start: 3_000,
            normal_start: 7_000,
            warp_create_iter: 4_999,
            warp_fraction: 0.4,
            synthetic_per_view: 2,
            densify_from: 500,
            densify_interval: 100,
            densify_stop: 15_000,
            opacity_reset_interval: 0,
            prune_from: 3_000,
            prune_interval: 1_000,
            prune_stop: 30_000,
            unseen_min_weight: Some(5e-3),
            sh_degree: 1,
            spatial_scale: None,
            supervise_background: true,
            lr: LearningRates::default(),
            densify: DensifyThresholds::default(),
            floater: FloaterPruneOptions::default(),
            perturbation: PerturbationParams::default(),
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.geo_start >= self.normal_start {
            return Err(invalid("geo_start must precede normal_start"));
        }
        if self.total_iters > 0 && self.normal_start >= self.total_iters {
            return Err(invalid("normal_start must precede total_iters"));
        }
        if !(self.warp_fraction >= 0.0 && self.warp_fraction <= 1.0) {
            return Err(invalid("warp_fraction must lie in [0, 1]"));
        }
        if self.densify_interval == 0 {
            return Err(invalid("densify_interval must be positive"));
        }
        if self.sh_degree > 3 {
            return Err(invalid("SH degree above 3 is not supported"));
        }
        if let Some(s) = self.spatial_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(invalid("spatial_scale must be positive"));
            }
        }
        self.lr.validate()?;
        self.densify.validate()?;
        self.floater.validate()?;
        self.perturbation.validate()
    }

    /// Number of iterations in the alternating span.
    pub fn warp_span(&self) -> usize {
        if self.warp_create_iter == 0 || self.warp_create_iter > self.total_iters {
            return 0;
        }
        let post = self.total_iters - self.warp_create_iter + 1;
        (self.warp_fraction * post as f64).round() as usize
    }

    /// Phase of `iteration` once synthetic views exist: inside the span,
    /// odd offsets from `warp_create_iter` are synthetic.
    pub fn phase_at(&self, iteration: usize) -> Phase {
        let span = self.warp_span();
        if span == 0 || iteration < self.warp_create_iter {
            return Phase::Given;
        }
        let offset = iteration - self.warp_create_iter;
        if offset < span && offset % 2 == 1 {
            Phase::Synthetic
        } else {
            Phase::Given
        }
    }

    pub fn active_at(&self, iteration: usize) -> ActiveTerms {
        ActiveTerms::at(iteration, self.geo_start, self.normal_start)
    }

    /// The schedule with every iteration count multiplied by `factor`
    /// (rounded, at least 1), learning rates and thresholds unchanged.
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |v: usize| ((v as f64 * factor).round() as usize).max(1);
        Self {
            total_iters: s(self.total_iters),
            geo_start: s(self.geo_start),
            normal_start: s(self.normal_start),
            warp_create_iter: s(self.warp_create_iter),
            densify_from: s(self.densify_from),
            densify_interval: s(self.densify_interval),
            densify_stop: s(self.densify_stop),
            opacity_reset_interval: if self.opacity_reset_interval == 0 {
                0
            } else {
                s(self.opacity_reset_interval)
            },
            prune_from: s(self.prune_from),
            prune_interval: if self.prune_interval == 0 {
                0
            } else {
                s(self.prune_interval)
            },
            prune_stop: s(self.prune_stop),
            ..self.clone()
        }
    }
}

/// One captured view: camera, image and object mask.
#[derive(Clone, Debug, PartialEq)]
pub struct GivenView {
    pub camera: CameraView,
    pub image: Image,
    pub mask: Mask,
}

/// A warped view used as supervision.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticView {
    pub camera: CameraView,
    pub image: Image,
    pub validity: Mask,
    /// Index of the given view it was warped from.
    pub source: usize,
}

/// One line of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub phase: Phase,
    /// Given or synthetic view index.
    pub view: usize,
    pub loss: f64,
    pub image: f64,
    pub warp: f64,
    /// Weighted geometric-consistency term added to the loss.
    pub geo: f64,
    /// Weighted normal term added to the loss.
    pub normal: f64,
    pub primitives: usize,
    pub cloned: usize,
    pub split: usize,
    pub culled: usize,
    pub pruned: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub records: Vec<IterationRecord>,
}

impl MetricsLog {
    pub const HEADER: &'static str =
        "iteration\tphase\tview\tloss\timage\twarp\tgeo\tnormal\tprimitives\tcloned\tsplit\tculled\tpruned";

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.records {
            let phase = match r.phase {
                Phase::Given => "given",
                Phase::Synthetic => "synthetic",
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{}\t{}\t{}\t{}\t{}",
                r.iteration,
                phase,
                r.view,
                r.loss,
                r.image,
                r.warp,
                r.geo,
                r.normal,
                r.primitives,
                r.cloned,
                r.split,
                r.culled,
                r.pruned
            );
        }
        out
    }

    pub fn write_tsv(&self, mut w: impl Write) -> Result<()> {
        w.write_all(self.to_tsv().as_bytes())?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub scene: ObjectGaussian,
    pub log: MetricsLog,
    pub synthetic: Vec<SyntheticView>,
}

/// Adam moments per primitive, laid out as center (3), log-scale (2),
/// opacity logit (1), rotation vector (3), then the color coefficients.
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-15;
const OPACITY_SLOT: usize = 5;

fn param_len(color: usize) -> usize {
    9 + 3 * color
}

impl Adam {
    fn new(scene: &ObjectGaussian) -> Self {
        let m: Vec<Vec<f64>> = scene
            .primitives
            .iter()
            .map(|p| vec![0.0; param_len(p.color.len())])
            .collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }

    fn remap(&mut self, kept: &[Option<usize>], scene: &ObjectGaussian) {
        let fresh = |i: usize| vec![0.0; param_len(scene.primitives[i].color.len())];
        let m = kept
            .iter()
            .enumerate()
            .map(|(i, k)| k.map_or_else(|| fresh(i), |o| self.m[o].clone()))
            .collect();
        let v = kept
            .iter()
            .enumerate()
            .map(|(i, k)| k.map_or_else(|| fresh(i), |o| self.v[o].clone()))
            .collect();
        self.m = m;
        self.v = v;
    }

    fn step(&mut self, scene: &mut ObjectGaussian, grad: &SceneGrad, lr: &LearningRates, lr_pos: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        let mut g = Vec::new();
        let mut rates = Vec::new();
        for (i, p) in scene.primitives.iter_mut().enumerate() {
            g.clear();
            g.extend(grad.center[i].iter());
            g.extend(grad.log_scale[i]);
            g.push(grad.opacity_logit[i]);
            g.extend(grad.rotation[i].iter());
            g.extend(grad.color[i].iter().flatten());
            rates.clear();
            rates.extend([lr_pos; 3]);
            rates.extend([lr.scale; 2]);
            rates.push(lr.opacity);
            rates.extend([lr.rotation; 3]);
            rates.extend([lr.color; 3]);
            rates.resize(g.len(), lr.color / lr.color_rest_divisor);

            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let mut d = [0.0; 9];
            for k in 0..g.len() {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                let upd = rates[k] * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
                if k < 9 {
                    d[k] = upd;
                } else {
                    let j = k - 9;
                    p.color[j / 3][j % 3] -= upd;
                }
            }
            for k in 0..3 {
                p.center[k] -= d[k];
            }
            p.scale[0] *= (-d[3]).exp();
            p.scale[1] *= (-d[4]).exp();
            p.opacity_logit -= d[OPACITY_SLOT];
            p.rotate_frame(&nalgebra::Vector3::new(-d[6], -d[7], -d[8]));
        }
    }

    fn reset_opacity_moments(&mut self) {
        for (m, v) in self.m.iter_mut().zip(self.v.iter_mut()) {
            m[OPACITY_SLOT] = 0.0;
            v[OPACITY_SLOT] = 0.0;
        }
    }
}

/// 1.1 times the largest distance of a camera center from their mean.
fn camera_spread(views: &[GivenView]) -> f64 {
    let n = views.len() as f64;
    let mean = views
        .iter()
        .fold(nalgebra::Vector3::zeros(), |a, v| a + v.camera.center())
        / n;
    let r = views
        .iter()
        .map(|v| (v.camera.center() - mean).norm())
        .fold(0.0, f64::max);
    if r > 0.0 {
        1.1 * r
    } else {
        1.0
    }
}

fn make_synthetic(
    scene: &ObjectGaussian,
    views: &[GivenView],
    targets: &[Image],
    schedule: &TrainSchedule,
    opts: &RenderOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SyntheticView>> {
    let pivot_world = scene.bounds.center();
    let mut out = Vec::new();
    for (i, view) in views.iter().enumerate() {
        let bundle = render(scene, &view.camera, opts)?;
        let mut depth = masked_depth(&bundle, opts.sigma);
        for (d, &m) in depth.as_mut_slice().iter_mut().zip(view.mask.as_slice()) {
            if !m {
                *d = f64::NAN;
            }
        }
        let pivot = view.camera.to_camera(&pivot_world);
        for _ in 0..schedule.synthetic_per_view {
            let motion = about_pivot(&sample_pose_perturbation_with(&schedule.perturbation, rng)?, &pivot);
            let w = warp_view(&targets[i], &depth, &view.camera, &motion)?;
            if w.empty {
                continue;
            }
            out.push(SyntheticView {
                camera: w.target_camera,
                image: w.image,
                validity: w.validity,
                source: i,
            });
        }
    }
    Ok(out)
}

/// Cycles through a shuffled index order, reshuffling after each pass.
struct Picker {
    order: Vec<usize>,
    pos: usize,
}

impl Picker {
    fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos >= self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Fits `scene` to the given views under `schedule`.
///
/// Returns the fitted scene, the per-iteration metrics log and the synthetic
/// views. A non-finite loss or gradient aborts with [`Error::Diverged`],
/// carrying the last finite scene.
pub fn train(
    scene: &ObjectGaussian,
    views: &[GivenView],
    schedule: &TrainSchedule,
    weights: &LossWeights,
    opts: &RenderOptions,
    seed: u64,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    weights.validate()?;
    opts.validate()?;
    if views.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    for v in views {
        v.camera.validate()?;
        v.image.ensure_dims(v.camera.width, v.camera.height)?;
        v.mask.ensure_dims(v.camera.width, v.camera.height)?;
    }
    let mut scene = scene.clone();
    let mut log = MetricsLog::default();
    if schedule.total_iters == 0 {
        return Ok(TrainOutcome {
            scene,
            log,
            synthetic: Vec::new(),
        });
    }
    scene.validate()?;
    scene.set_sh_degree(schedule.sh_degree);
    let opts = RenderOptions {
        sh_degree: schedule.sh_degree,
        ..opts.clone()
    };

    let targets: Vec<Image> = views
        .iter()
        .map(|v| {
            if !schedule.supervise_background {
                return v.image.clone();
            }
            let mut img = v.image.clone();
            for (px, &m) in img.as_mut_slice().iter_mut().zip(v.mask.as_slice()) {
                if !m {
                    *px = opts.background;
                }
            }
            img
        })
        .collect();
    let masks: Vec<Mask> = views
        .iter()
        .map(|v| {
            if schedule.supervise_background {
                Mask::filled(v.camera.width, v.camera.height, true)
            } else {
                v.mask.clone()
            }
        })
        .collect();
    let cameras: Vec<CameraView> = views.iter().map(|v| v.camera.clone()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut given_pick = Picker::new(views.len());
    let mut synthetic: Vec<SyntheticView> = Vec::new();
    let mut synth_pick = Picker::new(0);
    let mut adam = Adam::new(&scene);
    let mut stats = GradStats::new(scene.len());
    let spatial = schedule.spatial_scale.unwrap_or_else(|| camera_spread(views));

    for it in 1..=schedule.total_iters {
        if it == schedule.warp_create_iter && schedule.synthetic_per_view > 0 {
            synthetic = make_synthetic(&scene, views, &targets, schedule, &opts, &mut rng)?;
            synth_pick = Picker::new(synthetic.len());
            log::info!("iteration {it}: created {} synthetic views", synthetic.len());
        }
        let active = schedule.active_at(it);
        let phase = if synthetic.is_empty() {
            Phase::Given
        } else {
            schedule.phase_at(it)
        };
        let (view, camera, target) = match phase {
            Phase::Given => {
                let i = given_pick.next(&mut rng);
                (
                    i,
                    &views[i].camera,
                    Target::Given {
                        image: &targets[i],
                        mask: &masks[i],
                    },
                )
            }
            Phase::Synthetic => {
                let i = synth_pick.next(&mut rng);
                let s = &synthetic[i];
                (
                    i,
                    &s.camera,
                    Target::Synthetic {
                        image: &s.image,
                        validity: &s.validity,
                    },
                )
            }
        };
        let report = match compute_gradients(&scene, camera, target, &opts, weights, active, it) {
            Ok(r) => r,
            Err(Error::NonFinite { iteration, detail }) => {
                return Err(Error::Diverged {
                    iteration,
                    detail,
                    checkpoint: Box::new(scene),
                })
            }
            Err(e) => return Err(e),
        };
        let (w, h) = (camera.width as f64, camera.height as f64);
        let stat: Vec<f64> = report.screen_grad.iter().map(|g| g * 0.5 * w.max(h)).collect();
        stats.add(&stat, &report.visible);
        let lr_pos = schedule.lr.position_at(it, schedule.total_iters) * spatial;
        adam.step(&mut scene, &report.grad, &schedule.lr, lr_pos);

        let mut rec = IterationRecord {
            iteration: it,
            phase,
            view,
            loss: report.loss,
            image: report.parts.image,
            warp: report.parts.warp,
            geo: if active.geo {
                weights.lambda_geo * report.parts.geo
            } else {
                0.0
            },
            normal: if active.normal {
                weights.lambda_normal * report.parts.normal
            } else {
                0.0
            },
            primitives: scene.len(),
            cloned: 0,
            split: 0,
            culled: 0,
            pruned: 0,
        };

        if it >= schedule.densify_from && it <= schedule.densify_stop && it % schedule.densify_interval == 0 {
            let r = adaptive_density_control(&mut scene, &stats, &schedule.densify, &mut rng)?;
            adam.remap(&r.kept, &scene);
            stats.reset(scene.len());
            rec.cloned = r.cloned;
            rec.split = r.split;
            rec.culled = r.culled;
        }
        if schedule.opacity_reset_interval > 0
            && it <= schedule.densify_stop
            && it % schedule.opacity_reset_interval == 0
        {
            let cap = logit(0.01);
            for p in &mut scene.primitives {
                p.opacity_logit = p.opacity_logit.min(cap);
            }
            adam.reset_opacity_moments();
        }
        if schedule.prune_interval > 0
            && !scene.no_prune
            && it >= schedule.prune_from
            && it <= schedule.prune_stop
            && it % schedule.prune_interval == 0
        {
            let r = online_floater_prune(&mut scene, &cameras, &opts, &schedule.floater)?;
            if !r.removed.is_empty() {
                adam.remap(&r.kept, &scene);
                stats.reset(scene.len());
            }
            rec.pruned = r.removed.len();
        }
        rec.primitives = scene.len();
        log.records.push(rec);
    }
    if let Some(min_weight) = schedule.unseen_min_weight {
        let before = scene.len();
        prune_unseen(&mut scene, &cameras, &opts, min_weight)?;
        log::info!("dropped {} primitives never seen in a given view", before - scene.len());
    }
    Ok(TrainOutcome { scene, log, synthetic })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{make_fixture, FixtureKind, FixtureSpec};
    use crate::scene::{init_cuboid_random, Aabb};
    use nalgebra::Vector3;

    fn views(count: usize, size: usize) -> (Vec<GivenView>, ObjectGaussian) {
        let spec = FixtureSpec {
            count: 128,
            width: size,
            height: size,
            focal: size as f64 * 1.5,
            ring: crate::fixtures::RingSpec {
                count,
                ..FixtureSpec::new(FixtureKind::SphereShell).ring
            },
            ..FixtureSpec::new(FixtureKind::SphereShell)
        };
        let fx = make_fixture(&spec, &RenderOptions::default()).unwrap();
        let v = fx
            .cameras
            .iter()
            .zip(&fx.images)
            .zip(&fx.masks)
            .map(|((c, i), m)| GivenView {
                camera: c.clone(),
                image: i.clone(),
                mask: m.clone(),
            })
            .collect();
        (
            v,
            init_cuboid_random(Aabb::cube(Vector3::zeros(), 0.6), 192, 1).unwrap(),
        )
    }

    #[test]
    fn default_schedule_phases() {
        let s = TrainSchedule::default();
        s.validate().unwrap();
        assert_eq!(s.warp_span(), 10_001);
        assert!((1..4_999).all(|i| s.phase_at(i) == Phase::Given));
        assert_eq!(s.phase_at(4_999), Phase::Given);
        assert_eq!(s.phase_at(5_000), Phase::Synthetic);
        assert_eq!(s.phase_at(14_998), Phase::Synthetic);
        assert!((14_999..=30_000).all(|i| s.phase_at(i) == Phase::Given));
        assert_eq!(s.active_at(2_999), ActiveTerms::default());
        assert!(s.active_at(3_000).geo && !s.active_at(6_999).normal && s.active_at(7_000).normal);
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        let bad = TrainSchedule {
            geo_start: 8_000,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainSchedule {
            warp_fraction: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_iterations_return_the_initialization() {
        let (v, init) = views(3, 16);
        let s = TrainSchedule {
            total_iters: 0,
            ..Default::default()
        };
        let out = train(&init, &v, &s, &LossWeights::default(), &RenderOptions::default(), 0).unwrap();
        assert_eq!(out.scene, init);
        assert!(out.log.records.is_empty());
    }

    #[test]
    fn non_finite_target_aborts_with_checkpoint() {
        let (mut v, init) = views(3, 16);
        for view in &mut v {
            view.image.set(8, 8, [f64::NAN; 3]);
        }
        let s = TrainSchedule::default().scaled(0.01);
        match train(&init, &v, &s, &LossWeights::default(), &RenderOptions::default(), 0) {
            Err(Error::Diverged {
                iteration, checkpoint, ..
            }) => {
                assert_eq!(iteration, 1);
                assert_eq!(checkpoint.len(), init.len());
                checkpoint.validate().unwrap();
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn ten_given_and_twenty_synthetic_views_converge() {
        let (v, init) = views(10, 24);
        let weights = LossWeights {
            lambda_geo: 10.0,
            ..Default::default()
        };
        let s = TrainSchedule {
            unseen_min_weight: None,
            ..TrainSchedule::default().scaled(0.03)
        };
        let out = train(&init, &v, &s, &weights, &RenderOptions::default(), 5).unwrap();
        assert_eq!(out.synthetic.len(), 20);
        let given: Vec<f64> = out
            .log
            .records
            .iter()
            .filter(|r| r.phase == Phase::Given)
            .map(|r| r.image)
            .collect();
        let k = given.len() / 10;
        let head = given[..k].iter().sum::<f64>() / k as f64;
        let tail = given[given.len() - k..].iter().sum::<f64>() / k as f64;
        assert!(tail < 0.5 * head, "image loss {head} -> {tail}");
        let synth: Vec<f64> = out
            .log
            .records
            .iter()
            .filter(|r| r.phase == Phase::Synthetic)
            .map(|r| r.warp)
            .collect();
        assert!(!synth.is_empty());
        let k = (synth.len() / 4).max(1);
        let head = synth[..k].iter().sum::<f64>() / k as f64;
        let tail = synth[synth.len() - k..].iter().sum::<f64>() / k as f64;
        assert!(tail <= head, "warp loss {head} -> {tail}");
    }

    #[test]
    fn training_is_deterministic() {
        let (v, init) = views(4, 16);
        let s = TrainSchedule::default().scaled(0.02);
        let w = LossWeights::default();
        let a = train(&init, &v, &s, &w, &RenderOptions::default(), 9).unwrap();
        let b = train(&init, &v, &s, &w, &RenderOptions::default(), 9).unwrap();
        assert_eq!(a.scene, b.scene);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn metrics_log_has_one_line_per_iteration() {
        let (v, init) = views(3, 16);
        let s = TrainSchedule::default().scaled(0.005);
        let out = train(&init, &v, &s, &LossWeights::default(), &RenderOptions::default(), 0).unwrap();
        let tsv = out.log.to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines[0], MetricsLog::HEADER);
        assert_eq!(lines.len(), s.total_iters + 1);
        assert!(lines[1].starts_with("1\tgiven\t"));
    }
}

//! Central finite-difference verification of the analytic gradients.

use nalgebra::Vector3;
use serde::Serialize;

use super::objective::{compute_gradients, evaluate_loss, Target};
use crate::camera::CameraView;
use crate::error::Result;
use crate::losses::{ActiveTerms, LossWeights};
use crate::raster::Mask;
use crate::rasterizer::{RenderOptions, SceneGrad};
use crate::scene::ObjectGaussian;

/// Tolerances of the finite-difference comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FdOptions {
    /// Step is `rel_step * max(|x|, 1)`.
    pub rel_step: f64,
    pub tolerance: f64,
    /// Coordinates whose analytic gradient is at most this are skipped.
    pub min_grad: f64,
    pub required_fraction: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            rel_step: 1e-4,
            tolerance: 1e-3,
            min_grad: 1e-8,
            required_fraction: 0.99,
        }
    }
}

/// One scalar parameter of the optimizer parameterization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Coordinate {
    Center(usize, usize),
    LogScale(usize, usize),
    OpacityLogit(usize),
    Rotation(usize, usize),
    Color(usize, usize, usize),
}

/// Outcome of a finite-difference sweep.
#[derive(Clone, Debug, Serialize)]
pub struct FdReport {
    pub checked: usize,
    pub agreeing: usize,
    pub max_rel_error: f64,
    pub worst: Option<(Coordinate, f64, f64)>,
    pub passed: bool,
}

impl FdReport {
    pub fn fraction(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.agreeing as f64 / self.checked as f64
        }
    }

    /// Pools several sweeps into one.
    pub fn merge(reports: &[FdReport], required_fraction: f64) -> FdReport {
        let checked = reports.iter().map(|r| r.checked).sum();
        let agreeing = reports.iter().map(|r| r.agreeing).sum();
        let mut worst = None;
        let mut max_rel_error = 0.0;
        for r in reports {
            if r.max_rel_error > max_rel_error {
                max_rel_error = r.max_rel_error;
                worst = r.worst;
            }
        }
        let mut out = FdReport {
            checked,
            agreeing,
            max_rel_error,
            worst,
            passed: false,
        };
        out.passed = out.fraction() >= required_fraction;
        out
    }
}

/// All coordinates of `scene` in a fixed order.
pub fn coordinates(scene: &ObjectGaussian) -> Vec<Coordinate> {
    let mut out = Vec::new();
    for (i, p) in scene.primitives.iter().enumerate() {
        out.extend((0..3).map(|k| Coordinate::Center(i, k)));
        out.extend((0..2).map(|k| Coordinate::LogScale(i, k)));
        out.push(Coordinate::OpacityLogit(i));
        out.extend((0..3).map(|k| Coordinate::Rotation(i, k)));
        for c in 0..p.color.len() {
            out.extend((0..3).map(|ch| Coordinate::Color(i, c, ch)));
        }
    }
    out
}

/// Reads the analytic gradient for one coordinate.
pub fn gradient_at(grad: &SceneGrad, c: Coordinate) -> f64 {
    match c {
        Coordinate::Center(i, k) => grad.center[i][k],
        Coordinate::LogScale(i, k) => grad.log_scale[i][k],
        Coordinate::OpacityLogit(i) => grad.opacity_logit[i],
        Coordinate::Rotation(i, k) => grad.rotation[i][k],
        Coordinate::Color(i, c, ch) => grad.color[i][c][ch],
    }
}

fn current_value(scene: &ObjectGaussian, c: Coordinate) -> f64 {
    match c {
        Coordinate::Center(i, k) => scene.primitives[i].center[k],
        Coordinate::LogScale(i, k) => scene.primitives[i].scale[k].ln(),
        Coordinate::OpacityLogit(i) => scene.primitives[i].opacity_logit,
        Coordinate::Rotation(..) => 0.0,
        Coordinate::Color(i, c, ch) => scene.primitives[i].color[c][ch],
    }
}

/// Copy of `scene` with one coordinate moved by `delta`.
pub fn perturbed(scene: &ObjectGaussian, c: Coordinate, delta: f64) -> ObjectGaussian {
    let mut s = scene.clone();
    match c {
        Coordinate::Center(i, k) => s.primitives[i].center[k] += delta,
        Coordinate::LogScale(i, k) => {
            let p = &mut s.primitives[i];
            p.scale[k] = (p.scale[k].ln() + delta).exp();
        }
        Coordinate::OpacityLogit(i) => s.primitives[i].opacity_logit += delta,
        Coordinate::Rotation(i, k) => {
            let mut d = Vector3::zeros();
            d[k] = delta;
            s.primitives[i].rotate_frame(&d);
        }
        Coordinate::Color(i, c, ch) => s.primitives[i].color[c][ch] += delta,
    }
    s
}

/// One compared coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FdSample {
    pub coordinate: Coordinate,
    pub analytic: f64,
    pub numeric: f64,
}

impl FdSample {
    pub fn rel_error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs())
    }
}

/// Analytic and central-difference gradients on every coordinate whose
/// analytic gradient exceeds `fd.min_grad` in magnitude.
pub fn fd_samples(
    scene: &ObjectGaussian,
    camera: &CameraView,
    target: Target,
    opts: &RenderOptions,
    weights: &LossWeights,
    active: ActiveTerms,
    fd: &FdOptions,
) -> Result<Vec<FdSample>> {
    let report = compute_gradients(scene, camera, target, opts, weights, active, 0)?;
    let mut out = Vec::new();
    for c in coordinates(scene) {
        let analytic = gradient_at(&report.grad, c);
        if analytic.abs() <= fd.min_grad {
            continue;
        }
        let h = fd.rel_step * current_value(scene, c).abs().max(1.0);
        let (lp, _) = evaluate_loss(&perturbed(scene, c, h), camera, target, opts, weights, active)?;
        let (lm, _) = evaluate_loss(&perturbed(scene, c, -h), camera, target, opts, weights, active)?;
        out.push(FdSample {
            coordinate: c,
            analytic,
            numeric: (lp - lm) / (2.0 * h),
        });
    }
    Ok(out)
}

/// Summarizes samples against `fd.tolerance` and `fd.required_fraction`.
pub fn summarize(samples: &[FdSample], fd: &FdOptions) -> FdReport {
    let mut agreeing = 0;
    let mut max_rel_error: f64 = 0.0;
    let mut worst = None;
    for s in samples {
        let rel = s.rel_error();
        if rel <= fd.tolerance {
            agreeing += 1;
        }
        if rel > max_rel_error {
            max_rel_error = rel;
            worst = Some((s.coordinate, s.analytic, s.numeric));
        }
    }
    let mut out = FdReport {
        checked: samples.len(),
        agreeing,
        max_rel_error,
        worst,
        passed: false,
    };
    out.passed = out.fraction() >= fd.required_fraction;
    out
}

/// Compares analytic and central-difference gradients on every coordinate
/// whose analytic gradient exceeds `fd.min_grad` in magnitude.
pub fn check_gradients(
    scene: &ObjectGaussian,
    camera: &CameraView,
    target: Target,
    opts: &RenderOptions,
    weights: &LossWeights,
    active: ActiveTerms,
    fd: &FdOptions,
) -> Result<FdReport> {
    let samples = fd_samples(scene, camera, target, opts, weights, active, fd)?;
    Ok(summarize(&samples, fd))
}

/// A named loss configuration for the gradient suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LossConfig {
    /// Given view, pure L1.
    L1,
    /// Given view, L1 + D-SSIM.
    Dssim,
    /// Given view with the geometric-consistency term.
    Geo,
    /// Given view with geometric and normal terms.
    Normal,
    /// Synthetic view (warp loss) with geometric and normal terms.
    Warp,
}

impl LossConfig {
    pub const ALL: [LossConfig; 5] = [Self::L1, Self::Dssim, Self::Geo, Self::Normal, Self::Warp];

    pub fn weights(self) -> LossWeights {
        let w = LossWeights::default();
        match self {
            Self::L1 => LossWeights { dssim_mix: 0.0, ..w },
            _ => w,
        }
    }

    pub fn active(self) -> ActiveTerms {
        match self {
            Self::L1 | Self::Dssim => ActiveTerms::default(),
            Self::Geo => ActiveTerms {
                geo: true,
                normal: false,
            },
            Self::Normal | Self::Warp => ActiveTerms {
                geo: true,
                normal: true,
            },
        }
    }
}

/// Per-configuration and pooled outcome of [`check_gradient_suite`].
#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub per_config: Vec<(LossConfig, FdReport)>,
    pub pooled: FdReport,
    /// Every configuration reached the required fraction.
    pub passed: bool,
}

/// Finite-difference check over `seeds` random-splat cases with `n`
/// primitives at `size`×`size` pixels, under every [`LossConfig`]. Given
/// views use a full mask; synthetic views a fixed sparse validity pattern.
pub fn check_gradient_suite(seeds: std::ops::Range<u64>, n: usize, size: usize, fd: &FdOptions) -> Result<SuiteReport> {
    let opts = RenderOptions {
        sh_degree: 1,
        ..Default::default()
    };
    let mut per: Vec<(LossConfig, Vec<FdSample>)> = LossConfig::ALL.iter().map(|&c| (c, Vec::new())).collect();
    for seed in seeds {
        let case = crate::fixtures::gradient_check_case(n, size, seed)?;
        let mask = Mask::filled(size, size, true);
        let validity = Mask::from_fn(size, size, |x, y| (x + 2 * y) % 5 != 0);
        for (config, samples) in per.iter_mut() {
            let target = match config {
                LossConfig::Warp => Target::Synthetic {
                    image: &case.target,
                    validity: &validity,
                },
                _ => Target::Given {
                    image: &case.target,
                    mask: &mask,
                },
            };
            samples.extend(fd_samples(
                &case.scene,
                &case.camera,
                target,
                &opts,
                &config.weights(),
                config.active(),
                fd,
            )?);
        }
    }
    let per_config: Vec<(LossConfig, FdReport)> = per.iter().map(|(c, s)| (*c, summarize(s, fd))).collect();
    let reports: Vec<FdReport> = per_config.iter().map(|(_, r)| r.clone()).collect();
    let pooled = FdReport::merge(&reports, fd.required_fraction);
    let passed = per_config.iter().all(|(_, r)| r.passed);
    Ok(SuiteReport {
        per_config,
        pooled,
        passed,
    })
}

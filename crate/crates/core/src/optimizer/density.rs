//! Clone/split densification, opacity culling and online floater pruning.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::camera::CameraView;
use crate::error::{invalid, Result};
use crate::rasterizer::{render, Contributor, RenderOptions};
use crate::scene::ObjectGaussian;

/// Running screen-space gradient statistics per primitive.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradStats {
    pub accum: Vec<f64>,
    pub count: Vec<u32>,
}

impl GradStats {
    pub fn new(n: usize) -> Self {
        Self {
            accum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    /// Adds one iteration's statistic for the primitives seen in it.
    pub fn add(&mut self, stat: &[f64], visible: &[bool]) {
        for i in 0..self.accum.len().min(stat.len()) {
            if visible[i] {
                self.accum[i] += stat[i];
                self.count[i] += 1;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.accum[i] / self.count[i] as f64
        }
    }

    pub fn reset(&mut self, n: usize) {
        *self = Self::new(n);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyThresholds {
    /// Mean normalized screen-gradient norm that triggers densification.
    pub grad_threshold: f64,
    /// Primitives whose larger scale exceeds this (meters) are split,
    /// smaller ones are cloned.
    pub split_scale: f64,
    /// Split children get the parent scales divided by this.
    pub split_factor: f64,
    /// Primitives with opacity below this are removed.
    pub min_opacity: f64,
    /// Densification never grows the scene beyond this many primitives.
    pub max_primitives: usize,
    /// Kernel support (in standard deviations) used to keep split children
    /// inside the parent footprint.
    pub footprint_sigma: f64,
}

impl Default for DensifyThresholds {
    fn default() -> Self {
        Self {
            grad_threshold: 2e-3,
            split_scale: 0.03,
            split_factor: 1.6,
            min_opacity: 0.005,
            max_primitives: 8192,
            footprint_sigma: 3.0,
        }
    }
}

impl DensifyThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_threshold >= 0.0) || !(self.split_scale > 0.0) || !(self.split_factor > 1.0) {
            return Err(invalid(
                "densify thresholds must be positive and the split factor above 1",
            ));
        }
        if !(self.min_opacity >= 0.0 && self.min_opacity < 1.0) || !(self.footprint_sigma > 0.0) {
            return Err(invalid(
                "min opacity must lie in [0, 1) and the footprint must be positive",
            ));
        }
        Ok(())
    }
}

/// What a density-control pass did. `kept[new] = Some(old)` for surviving
/// primitives and `None` for newly created ones.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub culled: usize,
    pub kept: Vec<Option<usize>>,
}

/// Removes primitives whose flag is false; returns the old index of each
/// survivor.
pub fn retain_primitives(scene: &mut ObjectGaussian, keep: &[bool]) -> Vec<Option<usize>> {
    let old = std::mem::take(&mut scene.primitives);
    let mut kept = Vec::with_capacity(old.len());
    for (i, p) in old.into_iter().enumerate() {
        if keep[i] {
            kept.push(Some(i));
            scene.primitives.push(p);
        }
    }
    kept
}

/// Clones small and splits large primitives whose mean screen gradient
/// reaches the threshold, then culls low-opacity primitives.
///
/// Survivors keep their order; clones and split children are appended.
/// Split children sit inside the parent footprint at the parent scales
/// divided by `split_factor`.
pub fn adaptive_density_control(
    scene: &mut ObjectGaussian,
    stats: &GradStats,
    thresholds: &DensifyThresholds,
    rng: &mut ChaCha8Rng,
) -> Result<DensifyReport> {
    thresholds.validate()?;
    let n = scene.len();
    if stats.accum.len() != n {
        return Err(invalid("gradient statistics do not match the scene"));
    }
    let mut candidates: Vec<(usize, f64)> = (0..n)
        .map(|i| (i, stats.mean(i)))
        .filter(|&(_, g)| g > 0.0 && g >= thresholds.grad_threshold)
        .collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut room = thresholds.max_primitives.saturating_sub(n);
    let mut split_parent = vec![false; n];
    let mut clones = Vec::new();
    let mut children = Vec::new();
    for (i, _) in candidates {
        let p = &scene.primitives[i];
        if p.scale[0].max(p.scale[1]) > thresholds.split_scale {
            if room == 0 {
                continue;
            }
            room -= 1;
            split_parent[i] = true;
            for _ in 0..2 {
                let (a, b) = footprint_sample(rng, thresholds.footprint_sigma);
                let mut c = p.clone();
                c.center = p.center + p.tangent_u * (a * p.scale[0]) + p.tangent_v * (b * p.scale[1]);
                c.scale = [
                    p.scale[0] / thresholds.split_factor,
                    p.scale[1] / thresholds.split_factor,
                ];
                children.push(c);
            }
        } else if room > 0 {
            room -= 1;
            clones.push(p.clone());
        }
    }
    let cloned = clones.len();
    let split = children.len() / 2;

    let mut keep: Vec<bool> = (0..n)
        .map(|i| !split_parent[i] && scene.primitives[i].opacity() >= thresholds.min_opacity)
        .collect();
    if !keep.iter().any(|&k| k) && clones.is_empty() && children.is_empty() {
        keep = split_parent.iter().map(|s| !s).collect();
    }
    let culled = (0..n).filter(|&i| !split_parent[i] && !keep[i]).count();
    let mut kept = retain_primitives(scene, &keep);
    for p in clones.into_iter().chain(children) {
        if p.opacity() >= thresholds.min_opacity {
            scene.primitives.push(p);
            kept.push(None);
        }
    }
    Ok(DensifyReport {
        cloned,
        split,
        culled,
        kept,
    })
}

/// Standard normal pair truncated to the disk of radius `sigma`.
fn footprint_sample(rng: &mut ChaCha8Rng, sigma: f64) -> (f64, f64) {
    loop {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        if a * a + b * b <= sigma * sigma {
            return (a, b);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FloaterPruneOptions {
    /// Relative depth margin `tau`.
    pub margin: f64,
    /// Number of views in which a primitive must be a floater peak.
    pub min_views: usize,
    /// A pass that would remove more than this fraction is abandoned.
    pub max_fraction: f64,
}

impl Default for FloaterPruneOptions {
    fn default() -> Self {
        Self {
            margin: 0.05,
            min_views: 3,
            max_fraction: 0.5,
        }
    }
}

impl FloaterPruneOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin < 1.0) || self.min_views == 0 {
            return Err(invalid("prune margin must lie in (0, 1) and min_views be at least 1"));
        }
        if !(self.max_fraction > 0.0 && self.max_fraction <= 1.0) {
            return Err(invalid("max_fraction must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PruneReport {
    /// Indices (before the pass) of the removed primitives.
    pub removed: Vec<usize>,
    /// Candidate pixel count per view.
    pub candidate_pixels: Vec<usize>,
    /// Primitives that qualified, whether or not they were removed.
    pub flagged: usize,
    /// Set when the pass was abandoned by the removal-fraction guard.
    pub aborted: bool,
    /// Set when the scene is marked `no_prune`.
    pub skipped: bool,
    pub kept: Vec<Option<usize>>,
}

fn peak(list: &[Contributor]) -> Option<&Contributor> {
    let mut best: Option<&Contributor> = None;
    for c in list {
        match best {
            Some(b) if b.weight >= c.weight => {}
            _ => best = Some(c),
        }
    }
    best
}

/// Removes primitives that are the peak contributor in front of the blended
/// surface in at least `min_views` views.
///
/// A pixel is a candidate when `d_peak < d_alpha (1 - tau)`. Each
/// candidate's peak primitive is flagged for that view if its depth there is
/// also below `d_alpha (1 - tau)`.
pub fn online_floater_prune(
    scene: &mut ObjectGaussian,
    cameras: &[CameraView],
    render_opts: &RenderOptions,
    opts: &FloaterPruneOptions,
) -> Result<PruneReport> {
    opts.validate()?;
    let n = scene.len();
    let identity = || (0..n).map(Some).collect::<Vec<_>>();
    if scene.no_prune {
        return Ok(PruneReport {
            skipped: true,
            kept: identity(),
            ..Default::default()
        });
    }
    let mut views_flagged = vec![0usize; n];
    let mut candidate_pixels = Vec::with_capacity(cameras.len());
    let mut seen = vec![false; n];
    for cam in cameras {
        let b = render(scene, cam, render_opts)?;
        seen.iter_mut().for_each(|s| *s = false);
        let mut count = 0;
        for i in 0..b.width * b.height {
            let (dp, da) = (b.d_peak.as_slice()[i], b.d_alpha.as_slice()[i]);
            if !(dp.is_finite() && da.is_finite()) {
                continue;
            }
            let limit = da * (1.0 - opts.margin);
            if !(dp < limit) {
                continue;
            }
            count += 1;
            if let Some(c) = peak(b.contributors.pixel(i)) {
                if c.depth < limit {
                    seen[c.id as usize] = true;
                }
            }
        }
        candidate_pixels.push(count);
        for (v, s) in views_flagged.iter_mut().zip(&seen) {
            *v += *s as usize;
        }
    }
    let removed: Vec<usize> = (0..n).filter(|&i| views_flagged[i] >= opts.min_views).collect();
    let flagged = removed.len();
    if flagged as f64 > opts.max_fraction * n as f64 {
        log::warn!("floater pruning would remove {flagged} of {n} primitives; pass abandoned");
        return Ok(PruneReport {
            candidate_pixels,
            flagged,
            aborted: true,
            kept: identity(),
            ..Default::default()
        });
    }
    let mut keep = vec![true; n];
    for &i in &removed {
        keep[i] = false;
    }
    let kept = retain_primitives(scene, &keep);
    Ok(PruneReport {
        removed,
        candidate_pixels,
        flagged,
        aborted: false,
        skipped: false,
        kept,
    })
}

/// Removes primitives whose largest blend weight over all `cameras` stays
/// below `min_weight`.
pub fn prune_unseen(
    scene: &mut ObjectGaussian,
    cameras: &[CameraView],
    render_opts: &RenderOptions,
    min_weight: f64,
) -> Result<Vec<Option<usize>>> {
    let mut best = vec![0.0f64; scene.len()];
    for cam in cameras {
        let b = render(scene, cam, render_opts)?;
        for i in 0..b.width * b.height {
            for c in b.contributors.pixel(i) {
                let w = &mut best[c.id as usize];
                *w = w.max(c.weight);
            }
        }
    }
    let keep: Vec<bool> = best.iter().map(|&w| w >= min_weight).collect();
    if !keep.iter().any(|&k| k) {
        return Ok((0..scene.len()).map(Some).collect());
    }
    Ok(retain_primitives(scene, &keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{make_fixture, plane_scene, FixtureKind, FixtureSpec};
    use crate::scene::SurfelGaussian;
    use nalgebra::{Matrix3, Vector3};
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    fn splat(x: f64, scale: f64, alpha: f64) -> SurfelGaussian {
        SurfelGaussian::new(
            Vector3::new(x, 0.0, 0.0),
            &Matrix3::identity(),
            [scale, 0.5 * scale],
            alpha,
            [0.5; 3],
        )
    }

    fn scene(prims: Vec<SurfelGaussian>) -> ObjectGaussian {
        ObjectGaussian::new(prims, crate::scene::Aabb::cube(Vector3::zeros(), 1.0))
    }

    #[test]
    fn zero_gradients_change_nothing() {
        let mut s = scene(vec![splat(0.0, 0.01, 0.5), splat(0.5, 0.2, 0.5)]);
        let before = s.clone();
        let r =
            adaptive_density_control(&mut s, &GradStats::new(2), &DensifyThresholds::default(), &mut rng()).unwrap();
        assert_eq!((r.cloned, r.split, r.culled), (0, 0, 0));
        assert_eq!(s, before);
        assert_eq!(r.kept, vec![Some(0), Some(1)]);
    }

    #[test]
    fn low_opacity_is_culled() {
        let mut s = scene(vec![splat(0.0, 0.01, 0.5), splat(0.5, 0.01, 0.001)]);
        let r =
            adaptive_density_control(&mut s, &GradStats::new(2), &DensifyThresholds::default(), &mut rng()).unwrap();
        assert_eq!(r.culled, 1);
        assert_eq!(s.len(), 1);
        assert_eq!(s.primitives[0].center.x, 0.0);
    }

    #[test]
    fn culling_never_empties_the_scene() {
        let mut s = scene(vec![splat(0.0, 0.01, 0.001)]);
        adaptive_density_control(&mut s, &GradStats::new(1), &DensifyThresholds::default(), &mut rng()).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn small_primitives_clone_and_large_ones_split_inside_footprint() {
        let parent = splat(0.0, 0.2, 0.5);
        let s = scene(vec![splat(1.0, 0.01, 0.5), parent.clone()]);
        let stats = GradStats {
            accum: vec![1.0, 1.0],
            count: vec![1, 1],
        };
        let th = DensifyThresholds::default();
        let mut r = rng();
        for _ in 0..50 {
            let mut t = s.clone();
            let rep = adaptive_density_control(&mut t, &stats, &th, &mut r).unwrap();
            assert_eq!((rep.cloned, rep.split), (1, 1));
            assert_eq!(t.len(), 4);
            assert_eq!(rep.kept, vec![Some(0), None, None, None]);
            assert_eq!(t.primitives[1], t.primitives[0]);
            for child in &t.primitives[2..] {
                assert_eq!(child.scale, [0.2 / 1.6, 0.1 / 1.6]);
                let d = child.center - parent.center;
                let a = d.dot(&parent.tangent_u) / parent.scale[0];
                let b = d.dot(&parent.tangent_v) / parent.scale[1];
                assert!(a * a + b * b <= 9.0 + 1e-12);
                assert!(d.dot(&parent.normal()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn growth_respects_the_cap() {
        let mut s = scene((0..4).map(|i| splat(i as f64, 0.01, 0.5)).collect());
        let stats = GradStats {
            accum: vec![1.0, 4.0, 3.0, 2.0],
            count: vec![1; 4],
        };
        let th = DensifyThresholds {
            max_primitives: 6,
            ..Default::default()
        };
        let r = adaptive_density_control(&mut s, &stats, &th, &mut rng()).unwrap();
        assert_eq!(r.cloned, 2);
        assert_eq!(s.len(), 6);
        assert_eq!(s.primitives[4].center.x, 1.0);
        assert_eq!(s.primitives[5].center.x, 2.0);
    }

    #[test]
    fn clean_plane_has_no_floaters() {
        let spec = FixtureSpec {
            count: 256,
            ..FixtureSpec::new(FixtureKind::Plane)
        };
        let opts = RenderOptions::default();
        let fx = make_fixture(&spec, &opts).unwrap();
        let mut s = fx.scene.clone();
        let r = online_floater_prune(&mut s, &fx.cameras, &opts, &FloaterPruneOptions::default()).unwrap();
        assert!(r.removed.is_empty());
        assert_eq!(s, fx.scene);
    }

    #[test]
    fn injected_floater_is_the_only_removal() {
        let spec = FixtureSpec {
            count: 256,
            ..FixtureSpec::new(FixtureKind::FloaterInjected)
        };
        let opts = RenderOptions::default();
        let fx = make_fixture(&spec, &opts).unwrap();
        let mut s = fx.scene.clone();
        let r = online_floater_prune(&mut s, &fx.cameras, &opts, &FloaterPruneOptions::default()).unwrap();
        assert_eq!(r.removed, vec![fx.floater.unwrap()]);
        assert_eq!(s, fx.surface());
    }

    #[test]
    fn no_prune_scene_is_untouched() {
        let spec = FixtureSpec {
            count: 256,
            ..FixtureSpec::new(FixtureKind::FloaterInjected)
        };
        let opts = RenderOptions::default();
        let fx = make_fixture(&spec, &opts).unwrap();
        let mut s = fx.scene.clone();
        s.no_prune = true;
        let before = s.clone();
        let r = online_floater_prune(&mut s, &fx.cameras, &opts, &FloaterPruneOptions::default()).unwrap();
        assert!(r.skipped && r.removed.is_empty());
        assert_eq!(s, before);
    }

    #[test]
    fn mass_removal_is_abandoned() {
        let spec = FixtureSpec {
            count: 64,
            ..FixtureSpec::new(FixtureKind::Plane)
        };
        let opts = RenderOptions::default();
        let cams = spec.cameras().unwrap();
        let mut s = plane_scene(64, 1.0, 0);
        let floaters: Vec<SurfelGaussian> = s
            .primitives
            .iter()
            .map(|p| {
                let mut f = p.clone();
                f.center.z += 0.6;
                f.set_opacity(0.6);
                f
            })
            .collect();
        s.primitives.extend(floaters);
        let before = s.clone();
        let opts_p = FloaterPruneOptions {
            max_fraction: 0.05,
            ..Default::default()
        };
        let r = online_floater_prune(&mut s, &cams, &opts, &opts_p).unwrap();
        assert!(r.aborted, "flagged {}", r.flagged);
        assert!(r.removed.is_empty());
        assert_eq!(s, before);
    }
}

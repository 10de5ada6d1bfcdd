//! Pose recovery from 2D-3D correspondences and pose/reconstruction metrics.
//!
//! [`solve_pnp`] runs RANSAC over minimal sets with a normalized DLT (or a
//! plane homography when the model points are coplanar), re-fits on the
//! inliers and refines with damped Gauss-Newton on pixel reprojection error.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix6, Rotation3, Vector2, Vector3, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{Intrinsics, RigidPose};
use crate::correspondence::CorrespondenceMap;
use crate::error::{invalid, Error, Result};

/// Smallest correspondence count accepted by the solver.
pub const MIN_CORRESPONDENCES: usize = 6;

/// Levenberg-Marquardt iterations applied to each minimal-sample hypothesis.
const SAMPLE_REFINE_ITERATIONS: usize = 5;

/// Point sets whose thinnest principal extent is below this fraction of the
/// widest are solved as planar.
const PLANAR_RATIO: f64 = 1e-5;

/// A 2D pixel observation of a 3D model point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub pixel: [f64; 2],
    pub point: Vector3<f64>,
}

impl CorrespondenceMap {
    pub fn observations(&self) -> Vec<Observation> {
        self.entries
            .iter()
            .map(|e| Observation {
                pixel: [e.pixel[0] as f64, e.pixel[1] as f64],
                point: e.point,
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacOptions {
    pub max_iterations: usize,
    pub threshold_px: f64,
    pub min_set: usize,
    /// Sampling stops early once an all-inlier draw is this likely.
    pub confidence: f64,
    pub refine_iterations: usize,
    pub damping: f64,
    pub seed: u64,
}

impl Default for RansacOptions {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            threshold_px: 2.0,
            min_set: MIN_CORRESPONDENCES,
            confidence: 0.999,
            refine_iterations: 20,
            damping: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    /// Object-to-camera pose.
    pub pose: RigidPose,
    pub inliers: usize,
    #[serde(skip)]
    pub inlier_mask: Vec<bool>,
    /// Reprojection RMS over the inliers, pixels.
    pub rms_px: f64,
    /// Set when the coplanar branch was used.
    pub planar: bool,
}

fn reprojection(pose: &RigidPose, k: &Intrinsics, o: &Observation) -> Option<f64> {
    let c = pose.apply(&o.point);
    if !(c.z > 0.0) {
        return None;
    }
    let p = k.project(&c);
    Some((p.x - o.pixel[0]).hypot(p.y - o.pixel[1]))
}

/// Similarity normalizing points to zero mean and mean norm `sqrt(dim)`.
fn normalizer<const D: usize>(pts: &[[f64; D]]) -> ([f64; D], f64) {
    let n = pts.len() as f64;
    let mut c = [0.0; D];
    for p in pts {
        for k in 0..D {
            c[k] += p[k] / n;
        }
    }
    let mean = pts
        .iter()
        .map(|p| (0..D).map(|k| (p[k] - c[k]).powi(2)).sum::<f64>().sqrt())
        .sum::<f64>()
        / n;
    let s = if mean > 0.0 { (D as f64).sqrt() / mean } else { 1.0 };
    (c, s)
}

/// Null vector of `a` (right singular vector of the smallest singular value).
fn null_vector(a: DMatrix<f64>) -> Option<Vec<f64>> {
    let cols = a.ncols();
    let a = if a.nrows() < cols {
        let mut padded = DMatrix::zeros(cols, cols);
        padded.rows_mut(0, a.nrows()).copy_from(&a);
        padded
    } else {
        a
    };
    let svd = a.svd(false, true);
    let vt = svd.v_t?;
    let (i, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    Some(vt.row(i).iter().copied().collect())
}

fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    r
}

fn normalized_rays(obs: &[&Observation], k: &Intrinsics) -> Vec<[f64; 2]> {
    obs.iter()
        .map(|o| {
            let r = k.unproject(o.pixel[0], o.pixel[1]);
            [r.x, r.y]
        })
        .collect()
}

/// Normalized DLT for the 3x4 projection in normalized image coordinates.
fn dlt(obs: &[&Observation], k: &Intrinsics) -> Option<RigidPose> {
    let pts: Vec<[f64; 3]> = obs.iter().map(|o| [o.point.x, o.point.y, o.point.z]).collect();
    let rays = normalized_rays(obs, k);
    let (c3, s3) = normalizer(&pts);
    let (c2, s2) = normalizer(&rays);
    let mut a = DMatrix::zeros(2 * obs.len(), 12);
    for (i, (p, r)) in pts.iter().zip(&rays).enumerate() {
        let x = [(p[0] - c3[0]) * s3, (p[1] - c3[1]) * s3, (p[2] - c3[2]) * s3, 1.0];
        let u = (r[0] - c2[0]) * s2;
        let v = (r[1] - c2[1]) * s2;
        for j in 0..4 {
            a[(2 * i, j)] = x[j];
            a[(2 * i, 8 + j)] = -u * x[j];
            a[(2 * i + 1, 4 + j)] = x[j];
            a[(2 * i + 1, 8 + j)] = -v * x[j];
        }
    }
    let h = null_vector(a)?;
    let pn = Matrix3x4::from_row_slice(&h);
    let t3 = nalgebra::Matrix4::new(
        s3,
        0.0,
        0.0,
        -s3 * c3[0],
        0.0,
        s3,
        0.0,
        -s3 * c3[1],
        0.0,
        0.0,
        s3,
        -s3 * c3[2],
        0.0,
        0.0,
        0.0,
        1.0,
    );
    let t2_inv = Matrix3::new(1.0 / s2, 0.0, c2[0], 0.0, 1.0 / s2, c2[1], 0.0, 0.0, 1.0);
    let mut p = t2_inv * pn * t3;
    let m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant() < 0.0 {
        p = -p;
    }
    let m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
    let sv = m.singular_values();
    let scale = sv.sum() / 3.0;
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let r = nearest_rotation(&m);
    let t = p.column(3) / scale;
    Some(RigidPose::new(r, t))
}

/// Orthonormal plane frame `[e1 e2 n]` and centroid of coplanar points.
fn plane_frame(points: &[Vector3<f64>]) -> (Matrix3<f64>, Vector3<f64>, f64) {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let e1: Vector3<f64> = eig.eigenvectors.column(idx[0]).into_owned();
    let e2: Vector3<f64> = eig.eigenvectors.column(idx[1]).into_owned();
    let e3 = e1.cross(&e2);
    let big = eig.eigenvalues[idx[0]].max(0.0).sqrt();
    let small = eig.eigenvalues[idx[2]].max(0.0).sqrt();
    let ratio = if big > 0.0 { small / big } else { 1.0 };
    (Matrix3::from_columns(&[e1, e2, e3]), c, ratio)
}

/// Homography-based pose for coplanar model points.
fn planar_pose(obs: &[&Observation], k: &Intrinsics, frame: &Matrix3<f64>, origin: &Vector3<f64>) -> Option<RigidPose> {
    let q: Vec<[f64; 2]> = obs
        .iter()
        .map(|o| {
            let d = o.point - origin;
            [d.dot(&frame.column(0)), d.dot(&frame.column(1))]
        })
        .collect();
    let rays = normalized_rays(obs, k);
    let (cq, sq) = normalizer(&q);
    let (c2, s2) = normalizer(&rays);
    let mut a = DMatrix::zeros(2 * obs.len(), 9);
    for (i, (p, r)) in q.iter().zip(&rays).enumerate() {
        let x = [(p[0] - cq[0]) * sq, (p[1] - cq[1]) * sq, 1.0];
        let u = (r[0] - c2[0]) * s2;
        let v = (r[1] - c2[1]) * s2;
        for j in 0..3 {
            a[(2 * i, j)] = x[j];
            a[(2 * i, 6 + j)] = -u * x[j];
            a[(2 * i + 1, 3 + j)] = x[j];
            a[(2 * i + 1, 6 + j)] = -v * x[j];
        }
    }
    let h = null_vector(a)?;
    let hn = Matrix3::from_row_slice(&h);
    let tq = Matrix3::new(sq, 0.0, -sq * cq[0], 0.0, sq, -sq * cq[1], 0.0, 0.0, 1.0);
    let t2_inv = Matrix3::new(1.0 / s2, 0.0, c2[0], 0.0, 1.0 / s2, c2[1], 0.0, 0.0, 1.0);
    let hm = t2_inv * hn * tq;
    let norm = 0.5 * (hm.column(0).norm() + hm.column(1).norm());
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    let mut lambda = 1.0 / norm;
    if hm[(2, 2)] * lambda < 0.0 {
        lambda = -lambda;
    }
    let r1: Vector3<f64> = hm.column(0) * lambda;
    let r2: Vector3<f64> = hm.column(1) * lambda;
    let t: Vector3<f64> = hm.column(2) * lambda;
    let r_pl = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]));
    let r = r_pl * frame.transpose();
    Some(RigidPose::new(r, t - r * origin))
}

fn fit(obs: &[&Observation], k: &Intrinsics, planar: Option<(&Matrix3<f64>, &Vector3<f64>)>) -> Option<RigidPose> {
    match planar {
        Some((frame, origin)) => planar_pose(obs, k, frame, origin),
        None => dlt(obs, k),
    }
}

fn score(pose: &RigidPose, k: &Intrinsics, obs: &[Observation], threshold: f64) -> (Vec<bool>, f64) {
    let mut sq = 0.0;
    let mask = obs
        .iter()
        .map(|o| match reprojection(pose, k, o) {
            Some(e) if e < threshold => {
                sq += e * e;
                true
            }
            _ => false,
        })
        .collect();
    (mask, sq)
}

/// Damped Gauss-Newton (Levenberg-Marquardt) on pixel residuals, with the
/// rotation updated as `exp(w) R`.
fn refine(pose: RigidPose, k: &Intrinsics, obs: &[&Observation], iterations: usize, damping: f64) -> RigidPose {
    let cost = |p: &RigidPose| -> f64 {
        obs.iter()
            .map(|o| {
                let c = p.apply(&o.point);
                let q = k.project(&c);
                (q.x - o.pixel[0]).powi(2) + (q.y - o.pixel[1]).powi(2)
            })
            .sum()
    };
    let mut pose = pose;
    let mut current = cost(&pose);
    let mut mu = damping;
    for _ in 0..iterations {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for o in obs {
            let rx = pose.rotation * o.point;
            let c = rx + pose.translation;
            if !(c.z > 0.0) {
                continue;
            }
            let iz = 1.0 / c.z;
            let q = k.project(&c);
            let r = Vector2::new(q.x - o.pixel[0], q.y - o.pixel[1]);
            let dp = nalgebra::Matrix2x3::new(
                k.fx * iz,
                0.0,
                -k.fx * c.x * iz * iz,
                0.0,
                k.fy * iz,
                -k.fy * c.y * iz * iz,
            );
            let mut j = nalgebra::Matrix2x6::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dp * (-rx.cross_matrix())));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dp);
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        if g.norm() == 0.0 {
            break;
        }
        let mut damped = h;
        for i in 0..6 {
            damped[(i, i)] += mu * h[(i, i)].max(1e-12);
        }
        let Some(step) = damped.cholesky().map(|c| c.solve(&(-g))) else {
            mu *= 10.0;
            continue;
        };
        let w = Vector3::new(step[0], step[1], step[2]);
        let candidate = RigidPose::new(
            Rotation3::new(w).matrix() * pose.rotation,
            pose.translation + Vector3::new(step[3], step[4], step[5]),
        );
        let c = cost(&candidate);
        if c < current {
            pose = candidate;
            current = c;
            mu = (mu * 0.1).max(1e-12);
        } else {
            mu *= 10.0;
        }
    }
    RigidPose::new(nearest_rotation(&pose.rotation), pose.translation)
}

/// Recovers the object-to-camera pose from 2D-3D observations.
pub fn solve_pnp(obs: &[Observation], k: &Intrinsics, opts: &RansacOptions) -> Result<PoseEstimate> {
    k.validate()?;
    let min_set = opts.min_set.max(MIN_CORRESPONDENCES);
    if obs.len() < min_set {
        return Err(Error::InsufficientData {
            needed: min_set,
            got: obs.len(),
        });
    }
    if !(opts.threshold_px > 0.0) || opts.max_iterations == 0 {
        return Err(invalid("RANSAC needs a positive threshold and at least one iteration"));
    }
    let points: Vec<Vector3<f64>> = obs.iter().map(|o| o.point).collect();
    let (frame, origin, ratio) = plane_frame(&points);
    let planar = ratio < PLANAR_RATIO;
    let plane = planar.then_some((&frame, &origin));

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(RigidPose, Vec<bool>, usize, f64)> = None;
    let mut needed = opts.max_iterations;
    let mut it = 0;
    while it < needed.min(opts.max_iterations) {
        it += 1;
        let subset: Vec<&Observation> = sample(&mut rng, obs.len(), min_set).iter().map(|i| &obs[i]).collect();
        let Some(pose) = fit(&subset, k, plane) else {
            continue;
        };
        let pose = refine(pose, k, &subset, SAMPLE_REFINE_ITERATIONS, opts.damping);
        let (mask, sq) = score(&pose, k, obs, opts.threshold_px);
        let count = mask.iter().filter(|&&m| m).count();
        let better = match &best {
            None => count > 0,
            Some((_, _, c, s)) => count > *c || (count == *c && sq < *s),
        };
        if better {
            let w = count as f64 / obs.len() as f64;
            let p_good = w.powi(min_set as i32);
            needed = if p_good >= 1.0 {
                it
            } else if p_good <= 0.0 {
                opts.max_iterations
            } else {
                ((1.0 - opts.confidence).ln() / (1.0 - p_good).ln()).ceil() as usize
            };
            best = Some((pose, mask, count, sq));
        }
    }
    let all: Vec<&Observation> = obs.iter().collect();
    if let Some(pose) = fit(&all, k, plane) {
        let pose = refine(pose, k, &all, SAMPLE_REFINE_ITERATIONS, opts.damping);
        let (mask, sq) = score(&pose, k, obs, opts.threshold_px);
        let count = mask.iter().filter(|&&m| m).count();
        if best
            .as_ref()
            .is_none_or(|(_, _, c, s)| count > *c || (count == *c && sq < *s))
            && count > 0
        {
            best = Some((pose, mask, count, sq));
        }
    }
    let Some((pose, mask, _, _)) = best else {
        return Err(Error::Degenerate(
            "no RANSAC hypothesis explains any correspondence".into(),
        ));
    };
    let inl: Vec<&Observation> = obs.iter().zip(&mask).filter(|(_, &m)| m).map(|(o, _)| o).collect();
    let pose = if inl.len() >= min_set {
        fit(&inl, k, plane)
            .filter(|p| score(p, k, obs, opts.threshold_px).0.iter().filter(|&&m| m).count() >= inl.len())
            .unwrap_or(pose)
    } else {
        pose
    };
    let mut pose = refine(pose, k, &inl, opts.refine_iterations, opts.damping);
    let (mut mask, mut sq) = score(&pose, k, obs, opts.threshold_px);
    for _ in 0..5 {
        let inl: Vec<&Observation> = obs.iter().zip(&mask).filter(|(_, &m)| m).map(|(o, _)| o).collect();
        if inl.len() < min_set {
            break;
        }
        let next = refine(pose, k, &inl, opts.refine_iterations, opts.damping);
        let (next_mask, next_sq) = score(&next, k, obs, opts.threshold_px);
        let stable = next_mask == mask;
        if next_mask.iter().filter(|&&m| m).count() < inl.len() {
            break;
        }
        (pose, mask, sq) = (next, next_mask, next_sq);
        if stable {
            break;
        }
    }
    let inliers = mask.iter().filter(|&&m| m).count();
    Ok(PoseEstimate {
        pose,
        inliers,
        inlier_mask: mask,
        rms_px: if inliers > 0 {
            (sq / inliers as f64).sqrt()
        } else {
            f64::NAN
        },
        planar,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AddResult {
    /// Mean distance, meters.
    pub distance: f64,
    pub threshold: f64,
    pub correct: bool,
}

/// ADD (or ADD-S when `symmetric`) with correctness at 10% of the diameter.
pub fn metric_add(
    pred: &RigidPose,
    gt: &RigidPose,
    model_points: &[Vector3<f64>],
    diameter: f64,
    symmetric: bool,
) -> Result<AddResult> {
    if model_points.is_empty() {
        return Err(invalid("ADD needs at least one model point"));
    }
    if !(diameter > 0.0) {
        return Err(invalid("object diameter must be positive"));
    }
    let n = model_points.len() as f64;
    let distance = if symmetric {
        let gt_pts: Vec<Vector3<f64>> = model_points.iter().map(|y| gt.apply(y)).collect();
        model_points
            .par_iter()
            .map(|x| {
                let p = pred.apply(x);
                gt_pts
                    .iter()
                    .map(|g| (p - g).norm_squared())
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .sum::<f64>()
            / n
    } else {
        model_points
            .iter()
            .map(|x| (pred.apply(x) - gt.apply(x)).norm())
            .sum::<f64>()
            / n
    };
    let threshold = 0.1 * diameter;
    Ok(AddResult {
        distance,
        threshold,
        correct: distance < threshold,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjResult {
    /// Mean 2D distance, pixels.
    pub mean_px: f64,
    pub threshold_px: f64,
    pub correct: bool,
    /// Points in front of the camera under both poses.
    pub used: usize,
}

/// Mean distance between projections under both poses, correct below
/// `threshold_px`. Points behind the camera under either pose are skipped.
pub fn metric_proj(
    pred: &RigidPose,
    gt: &RigidPose,
    model_points: &[Vector3<f64>],
    k: &Intrinsics,
    threshold_px: f64,
) -> Result<ProjResult> {
    let mut sum = 0.0;
    let mut used = 0;
    for x in model_points {
        let (a, b) = (pred.apply(x), gt.apply(x));
        if !(a.z > 0.0 && b.z > 0.0) {
            continue;
        }
        let (pa, pb) = (k.project(&a), k.project(&b));
        sum += (pa - pb).norm();
        used += 1;
    }
    if used == 0 {
        return Err(invalid("no model point lies in front of the camera"));
    }
    let mean_px = sum / used as f64;
    Ok(ProjResult {
        mean_px,
        threshold_px,
        correct: mean_px < threshold_px,
        used,
    })
}

/// Largest pairwise distance.
pub fn model_diameter(points: &[Vector3<f64>]) -> f64 {
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| points[i + 1..].iter().map(|q| (p - q).norm()).fold(0.0, f64::max))
        .reduce(|| 0.0, f64::max)
}

fn nearest_distances(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Vec<f64> {
    pred.par_iter()
        .map(|p| {
            gt.iter()
                .map(|g| (p - g).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// Fraction of `pred` points whose nearest `gt` point is within `threshold`.
pub fn point_cloud_accuracy(pred: &[Vector3<f64>], gt: &[Vector3<f64>], threshold: f64) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(invalid("point cloud accuracy needs two non-empty clouds"));
    }
    if !(threshold >= 0.0) {
        return Err(invalid("threshold must be non-negative"));
    }
    let d = nearest_distances(pred, gt);
    Ok(d.iter().filter(|&&v| v <= threshold).count() as f64 / d.len() as f64)
}

/// Accuracy at several thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub thresholds_mm: Vec<f64>,
    pub accuracy: Vec<f64>,
}

impl AccuracyTable {
    pub fn compute(pred: &[Vector3<f64>], gt: &[Vector3<f64>], thresholds_mm: &[f64]) -> Result<Self> {
        if pred.is_empty() || gt.is_empty() {
            return Err(invalid("point cloud accuracy needs two non-empty clouds"));
        }
        let d = nearest_distances(pred, gt);
        let accuracy = thresholds_mm
            .iter()
            .map(|t| d.iter().filter(|&&v| v <= t * 1e-3).count() as f64 / d.len() as f64)
            .collect();
        Ok(Self {
            thresholds_mm: thresholds_mm.to_vec(),
            accuracy,
        })
    }

    /// The 1 / 3 / 5 mm table.
    pub fn standard(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Self> {
        Self::compute(pred, gt, &[1.0, 3.0, 5.0])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectEval {
    pub name: String,
    pub symmetric: bool,
    pub diameter_m: f64,
    pub add: AddResult,
    pub proj: ProjResult,
}

impl ObjectEval {
    pub fn evaluate(
        name: &str,
        pred: &RigidPose,
        gt: &RigidPose,
        model_points: &[Vector3<f64>],
        k: &Intrinsics,
        symmetric: bool,
    ) -> Result<Self> {
        let diameter_m = model_diameter(model_points);
        Ok(Self {
            name: name.to_string(),
            symmetric,
            diameter_m,
            add: metric_add(pred, gt, model_points, diameter_m, symmetric)?,
            proj: metric_proj(pred, gt, model_points, k, 5.0)?,
        })
    }
}

/// JSON evaluation report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub units: String,
    pub objects: Vec<ObjectEval>,
    pub point_cloud: Option<AccuracyTable>,
}

impl EvalReport {
    pub fn new(objects: Vec<ObjectEval>, point_cloud: Option<AccuracyTable>) -> Self {
        Self {
            units: "meters, pixels; point-cloud thresholds in millimeters".into(),
            objects,
            point_cloud,
        }
    }

    /// Share of objects passing ADD(S)-0.1d and Proj@5pix.
    pub fn summary(&self) -> (f64, f64) {
        let n = self.objects.len().max(1) as f64;
        (
            self.objects.iter().filter(|o| o.add.correct).count() as f64 / n,
            self.objects.iter().filter(|o| o.proj.correct).count() as f64 / n,
        )
    }
}

//! Elliptic-disk Gaussian primitives and the object-level primitive set.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::sh;

/// Opacity assigned to freshly initialized primitives.
pub const INIT_OPACITY: f64 = 0.1;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn cube(center: Vector3<f64>, half: f64) -> Self {
        let h = Vector3::repeat(half);
        Self::new(center - h, center + h)
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Box scaled about its center.
    pub fn scaled(&self, factor: f64) -> Self {
        let c = self.center();
        let h = self.extent() * (0.5 * factor);
        Self::new(c - h, c + h)
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (mut lo, mut hi) = (first, first);
        for p in it {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        Some(Self::new(lo, hi))
    }
}

/// One oriented elliptic disk.
///
/// Opacity is stored as a logit and the color block holds `(degree + 1)^2`
/// spherical-harmonic RGB coefficients; the rendered color is `0.5 + SH(dir)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfelGaussian {
    pub center: Vector3<f64>,
    pub tangent_u: Vector3<f64>,
    pub tangent_v: Vector3<f64>,
    pub scale: [f64; 2],
    pub opacity_logit: f64,
    pub color: Vec<[f64; 3]>,
}

impl SurfelGaussian {
    /// Builds a primitive from a rotation whose first two columns are the tangents.
    pub fn new(center: Vector3<f64>, rotation: &Matrix3<f64>, scale: [f64; 2], opacity: f64, rgb: [f64; 3]) -> Self {
        let mut color = vec![[0.0; 3]; 1];
        for c in 0..3 {
            color[0][c] = (rgb[c] - 0.5) / sh::C0;
        }
        Self {
            center,
            tangent_u: rotation.column(0).into_owned(),
            tangent_v: rotation.column(1).into_owned(),
            scale,
            opacity_logit: logit(opacity),
            color,
        }
    }

    #[inline]
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn set_opacity(&mut self, alpha: f64) {
        self.opacity_logit = logit(alpha.clamp(1e-12, 1.0 - 1e-12));
    }

    /// Disk normal `t_u x t_v`.
    #[inline]
    pub fn normal(&self) -> Vector3<f64> {
        self.tangent_u.cross(&self.tangent_v)
    }

    /// `[t_u, t_v, t_w]` as columns.
    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.tangent_u, self.tangent_v, self.normal()])
    }

    pub fn sh_degree(&self) -> usize {
        sh::degree_for_coeffs(self.color.len())
    }

    /// Base (view-independent) color.
    pub fn base_rgb(&self) -> [f64; 3] {
        let mut rgb = [0.5; 3];
        for c in 0..3 {
            rgb[c] += sh::C0 * self.color[0][c];
        }
        rgb
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.center.iter().all(|v| v.is_finite())
            && self.scale.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.color.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(invalid("primitive has non-finite parameters"));
        }
        if (self.tangent_u.norm() - 1.0).abs() > 1e-6
            || (self.tangent_v.norm() - 1.0).abs() > 1e-6
            || self.tangent_u.dot(&self.tangent_v).abs() > 1e-6
        {
            return Err(invalid("tangent frame is not orthonormal"));
        }
        if self.scale[0] <= 0.0 || self.scale[1] <= 0.0 {
            return Err(invalid("scales must be positive"));
        }
        if self.opacity() <= 0.0 {
            return Err(invalid("opacity must be positive"));
        }
        if !sh::is_valid_coeff_count(self.color.len()) {
            return Err(invalid("color block length is not (d+1)^2 for d <= 3"));
        }
        Ok(())
    }

    /// Rotates the tangent frame by `exp([delta]x)` (world axes) and
    /// re-orthonormalizes it.
    pub fn rotate_frame(&mut self, delta: &Vector3<f64>) {
        let r = Rotation3::new(*delta);
        let u = r * self.tangent_u;
        let v = r * self.tangent_v;
        let u = u.normalize();
        let v = (v - u * u.dot(&v)).normalize();
        self.tangent_u = u;
        self.tangent_v = v;
    }

    /// Grows or shrinks the color block to the given SH degree.
    pub fn set_sh_degree(&mut self, degree: usize) {
        self.color.resize(sh::coeff_count(degree), [0.0; 3]);
    }
}

/// Covariance `R S S^T R^T` with `S = diag(s_u, s_v, 0)`; rank at most two.
pub fn primitive_covariance(p: &SurfelGaussian) -> Matrix3<f64> {
    let a = p.tangent_u * p.scale[0];
    let b = p.tangent_v * p.scale[1];
    a * a.transpose() + b * b.transpose()
}

/// The full primitive set for one object.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectGaussian {
    pub primitives: Vec<SurfelGaussian>,
    pub bounds: Aabb,
    pub no_prune: bool,
}

impl ObjectGaussian {
    pub fn new(primitives: Vec<SurfelGaussian>, bounds: Aabb) -> Self {
        Self {
            primitives,
            bounds,
            no_prune: false,
        }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// SH degree of the first primitive (all primitives share a degree).
    pub fn sh_degree(&self) -> usize {
        self.primitives.first().map_or(0, |p| p.sh_degree())
    }

    pub fn set_sh_degree(&mut self, degree: usize) {
        for p in &mut self.primitives {
            p.set_sh_degree(degree);
        }
    }

    pub fn centers(&self) -> Vec<Vector3<f64>> {
        self.primitives.iter().map(|p| p.center).collect()
    }

    pub fn mean_scale(&self) -> f64 {
        if self.primitives.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.primitives.iter().map(|p| 0.5 * (p.scale[0] + p.scale[1])).sum();
        sum / self.primitives.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(invalid("object has no primitives"));
        }
        let degree = self.primitives[0].color.len();
        for (i, p) in self.primitives.iter().enumerate() {
            p.validate().map_err(|e| invalid(format!("primitive {i}: {e}")))?;
            if p.color.len() != degree {
                return Err(invalid(format!("primitive {i}: mixed SH degrees")));
            }
        }
        Ok(())
    }
}

/// Uniform random rotation from a normalized Gaussian 4-vector.
pub(crate) fn random_rotation<R: Rng>(rng: &mut R) -> Matrix3<f64> {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-6 {
            let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
            return *uq.to_rotation_matrix().matrix();
        }
    }
}

/// Mean distance from each point to its `k` nearest neighbors (brute force).
pub(crate) fn mean_knn_distance(points: &[Vector3<f64>], k: usize) -> Vec<f64> {
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best = vec![f64::INFINITY; k];
            for (j, q) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = (p - q).norm_squared();
                if d < best[k - 1] {
                    let mut pos = k - 1;
                    while pos > 0 && best[pos - 1] > d {
                        best[pos] = best[pos - 1];
                        pos -= 1;
                    }
                    best[pos] = d;
                }
            }
            let found: Vec<f64> = best.into_iter().filter(|d| d.is_finite()).collect();
            if found.is_empty() {
                f64::NAN
            } else {
                found.iter().map(|d| d.sqrt()).sum::<f64>() / found.len() as f64
            }
        })
        .collect()
}

/// Random cuboid initialization: `n` centers uniform in `bounds`, random
/// orthonormal frames, isotropic scales from the 3-nearest-neighbor mean
/// distance, opacity 0.1 and mid-gray degree-0 color.
pub fn init_cuboid_random(bounds: Aabb, n: usize, seed: u64) -> Result<ObjectGaussian> {
    if n == 0 {
        return Err(invalid("initialization needs at least one primitive"));
    }
    let ext = bounds.extent();
    if !(ext.x > 0.0 && ext.y > 0.0 && ext.z > 0.0) || !bounds.volume().is_finite() {
        return Err(invalid("initialization bounds must have positive volume"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Vec::with_capacity(n);
    let mut frames = Vec::with_capacity(n);
    for _ in 0..n {
        let c = Vector3::new(
            bounds.min.x + rng.random::<f64>() * ext.x,
            bounds.min.y + rng.random::<f64>() * ext.y,
            bounds.min.z + rng.random::<f64>() * ext.z,
        );
        centers.push(c);
        frames.push(random_rotation(&mut rng));
    }
    let fallback = 0.5 * bounds.volume().cbrt();
    let knn = mean_knn_distance(&centers, 3);
    let primitives = centers
        .into_iter()
        .zip(frames)
        .zip(knn)
        .map(|((c, r), d)| {
            let s = if d.is_finite() && d > 0.0 { d } else { fallback };
            SurfelGaussian::new(c, &r, [s, s], INIT_OPACITY, [0.5; 3])
        })
        .collect();
    Ok(ObjectGaussian::new(primitives, bounds))
}

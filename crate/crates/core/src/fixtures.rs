//! Deterministic ground-truth scenes and camera rings used as test
//! substrates: a textured plane, a sphere shell, a textured cuboid, a plane
//! with one injected floater and a pair of occluding objects.

use std::f64::consts::PI;

use nalgebra::{Isometry3, Matrix3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraView, Intrinsics};
use crate::error::{invalid, Result};
use crate::raster::{Image, Mask};
use crate::rasterizer::{alpha_to_mask, render, RenderOptions};
use crate::scene::{random_rotation, Aabb, ObjectGaussian, SurfelGaussian};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixtureKind {
    Plane,
    SphereShell,
    TexturedCuboid,
    FloaterInjected,
    OcclusionPair,
}

impl std::str::FromStr for FixtureKind {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "plane" => Self::Plane,
            "sphere-shell" => Self::SphereShell,
            "textured-cuboid" => Self::TexturedCuboid,
            "floater-injected" => Self::FloaterInjected,
            "occlusion-pair" => Self::OcclusionPair,
            other => return Err(invalid(format!("unknown fixture kind '{other}'"))),
        })
    }
}

/// Cameras evenly spaced in azimuth at a fixed distance and elevation,
/// all looking at the origin with world z up.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingSpec {
    pub count: usize,
    /// Distance from the origin, meters.
    pub radius: f64,
    pub elevation_deg: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub kind: FixtureKind,
    /// Number of surface primitives.
    pub count: usize,
    pub ring: RingSpec,
    /// Extra cameras halfway between ring cameras, for evaluation.
    pub held_out: usize,
    pub width: usize,
    pub height: usize,
    /// Focal length, pixels.
    pub focal: f64,
    pub seed: u64,
}

impl FixtureSpec {
    /// Defaults suited to each kind.
    pub fn new(kind: FixtureKind) -> Self {
        let elevation_deg = match kind {
            FixtureKind::Plane => 60.0,
            FixtureKind::SphereShell => 20.0,
            FixtureKind::TexturedCuboid => 30.0,
            FixtureKind::FloaterInjected => 75.0,
            FixtureKind::OcclusionPair => 15.0,
        };
        Self {
            kind,
            count: 512,
            ring: RingSpec {
                count: 10,
                radius: 3.0,
                elevation_deg,
            },
            held_out: 2,
            width: 64,
            height: 64,
            focal: 100.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.ring.count == 0 {
            return Err(invalid("fixture needs at least one primitive and one camera"));
        }
        if !(self.ring.radius > 0.0) || !(self.focal > 0.0) || self.width == 0 || self.height == 0 {
            return Err(invalid(
                "fixture ring radius, focal length and image size must be positive",
            ));
        }
        if !(self.ring.elevation_deg.abs() < 89.0) {
            return Err(invalid("ring elevation must lie in (-89, 89) degrees"));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::new(
            self.focal,
            self.focal,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        )
    }

    fn camera_at(&self, azimuth: f64) -> Result<CameraView> {
        let e = self.ring.elevation_deg.to_radians();
        let r = self.ring.radius;
        let eye = Vector3::new(r * e.cos() * azimuth.cos(), r * e.cos() * azimuth.sin(), r * e.sin());
        CameraView::look_at(
            self.intrinsics(),
            self.width,
            self.height,
            eye,
            Vector3::zeros(),
            Vector3::z(),
        )
    }

    /// The ring cameras.
    pub fn cameras(&self) -> Result<Vec<CameraView>> {
        let n = self.ring.count;
        (0..n).map(|i| self.camera_at(2.0 * PI * i as f64 / n as f64)).collect()
    }

    /// Cameras between ring cameras (never coinciding with them).
    pub fn held_out_cameras(&self) -> Result<Vec<CameraView>> {
        let n = self.ring.count as f64;
        let step = 2.0 * PI / n;
        (0..self.held_out)
            .map(|i| {
                let slot = (i * self.ring.count) / self.held_out.max(1);
                self.camera_at(step * (slot as f64 + 0.5))
            })
            .collect()
    }
}

/// One placed object of a multi-object fixture.
#[derive(Clone, Debug)]
pub struct PlacedObject {
    /// Primitives in object coordinates.
    pub scene: ObjectGaussian,
    /// Object-to-world pose.
    pub pose: Isometry3<f64>,
}

#[derive(Clone, Debug)]
pub struct Fixture {
    pub spec: FixtureSpec,
    /// Ground truth in world coordinates.
    pub scene: ObjectGaussian,
    pub cameras: Vec<CameraView>,
    pub images: Vec<Image>,
    pub masks: Vec<Mask>,
    pub held_out_cameras: Vec<CameraView>,
    pub held_out_images: Vec<Image>,
    /// Index of the injected floater.
    pub floater: Option<usize>,
    /// Individual objects, for the occlusion pair.
    pub objects: Vec<PlacedObject>,
}

impl Fixture {
    /// Ground truth without the injected floater.
    pub fn surface(&self) -> ObjectGaussian {
        let mut s = self.scene.clone();
        if let Some(f) = self.floater {
            s.primitives.remove(f);
        }
        s
    }
}

/// Rotation whose third column is `n`.
pub(crate) fn frame_from_normal(n: &Vector3<f64>) -> Matrix3<f64> {
    let n = n.normalize();
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = helper.cross(&n).normalize();
    let v = n.cross(&u);
    Matrix3::from_columns(&[u, v, n])
}

fn texture(p: &Vector3<f64>) -> [f64; 3] {
    [
        0.5 + 0.35 * (3.0 * p.x + 1.0).sin(),
        0.5 + 0.35 * (2.5 * p.y - 0.5).cos(),
        0.5 + 0.35 * (3.5 * p.z + 2.0).sin(),
    ]
}

const SURFACE_OPACITY: f64 = 0.95;
const COVERAGE: f64 = 0.75;

fn surfel(center: Vector3<f64>, normal: &Vector3<f64>, spacing: f64) -> SurfelGaussian {
    let s = COVERAGE * spacing;
    SurfelGaussian::new(
        center,
        &frame_from_normal(normal),
        [s, s],
        SURFACE_OPACITY,
        texture(&center),
    )
}

/// Square in the z = 0 plane with a jittered grid of `n` primitives.
pub fn plane_scene(n: usize, half: f64, seed: u64) -> ObjectGaussian {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = (n as f64).sqrt().ceil() as usize;
    let spacing = 2.0 * half / side as f64;
    let mut prims = Vec::with_capacity(n);
    for k in 0..n {
        let (i, j) = (k % side, k / side);
        let jx: f64 = rng.random_range(-0.2..0.2);
        let jy: f64 = rng.random_range(-0.2..0.2);
        let c = Vector3::new(
            -half + spacing * (i as f64 + 0.5 + jx),
            -half + spacing * (j as f64 + 0.5 + jy),
            0.0,
        );
        prims.push(surfel(c, &Vector3::z(), spacing));
    }
    let b = Aabb::new(
        Vector3::new(-half, -half, -0.05 * half),
        Vector3::new(half, half, 0.05 * half),
    );
    ObjectGaussian::new(prims, b)
}

/// Fibonacci-distributed primitives tangent to a sphere.
pub fn sphere_scene(n: usize, radius: f64) -> ObjectGaussian {
    let golden = PI * (3.0 - 5f64.sqrt());
    let spacing = (4.0 * PI * radius * radius / n as f64).sqrt();
    let prims = (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let th = golden * i as f64;
            let dir = Vector3::new(r * th.cos(), r * th.sin(), z).normalize();
            surfel(dir * radius, &dir, spacing)
        })
        .collect();
    ObjectGaussian::new(prims, Aabb::cube(Vector3::zeros(), radius))
}

/// Primitives on the six faces of a box, proportional to face area.
pub fn cuboid_scene(n: usize, half: Vector3<f64>, seed: u64) -> ObjectGaussian {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let areas = [half.y * half.z, half.x * half.z, half.x * half.y];
    let total: f64 = 2.0 * areas.iter().sum::<f64>();
    let spacing = (4.0 * total / n as f64).sqrt();
    let mut prims = Vec::with_capacity(n);
    for _ in 0..n {
        let pick = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut face = 5;
        for f in 0..6 {
            acc += areas[f / 2];
            if pick < acc {
                face = f;
                break;
            }
        }
        let axis = face / 2;
        let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
        let mut c = Vector3::zeros();
        for a in 0..3 {
            c[a] = if a == axis {
                sign * half[a]
            } else {
                rng.random_range(-half[a]..half[a])
            };
        }
        let mut n_vec = Vector3::zeros();
        n_vec[axis] = sign;
        prims.push(surfel(c, &n_vec, spacing));
    }
    ObjectGaussian::new(prims, Aabb::new(-half, half))
}

/// Random primitives in a unit cube, used for gradient checks.
pub fn random_splat_scene(n: usize, scale: (f64, f64), sh_degree: usize, seed: u64) -> ObjectGaussian {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prims = (0..n)
        .map(|_| {
            let c = Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            );
            let r = random_rotation(&mut rng);
            let s = [rng.random_range(scale.0..scale.1), rng.random_range(scale.0..scale.1)];
            let rgb = [rng.random(), rng.random(), rng.random()];
            let mut p = SurfelGaussian::new(c, &r, s, rng.random_range(0.3..0.9), rgb);
            p.set_sh_degree(sh_degree);
            for k in 1..p.color.len() {
                p.color[k] = std::array::from_fn(|_| rng.random_range(-0.2..0.2));
            }
            p
        })
        .collect();
    ObjectGaussian::new(prims, Aabb::cube(Vector3::zeros(), 0.5))
}

/// A random-splat scene, a camera about 3 m away and a target rendered
/// from an unrelated scene, for finite-difference checks.
pub struct GradCheckCase {
    pub scene: ObjectGaussian,
    pub camera: CameraView,
    pub target: Image,
}

pub fn gradient_check_case(n: usize, size: usize, seed: u64) -> Result<GradCheckCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let dir = loop {
        let v: Vector3<f64> = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let len: f64 = v.norm();
        if len > 0.2 && len <= 1.0 && v.z.abs() < 0.8 * len {
            break v / len;
        }
    };
    let f = 1.25 * size as f64;
    let c = (size as f64 - 1.0) / 2.0;
    let camera = CameraView::look_at(
        Intrinsics::new(f, f, c, c),
        size,
        size,
        dir * 3.0,
        Vector3::zeros(),
        Vector3::z(),
    )?;
    let opts = RenderOptions {
        sh_degree: 1,
        ..Default::default()
    };
    let scene = random_splat_scene(n, (0.05, 0.12), 1, seed);
    let other = random_splat_scene(n, (0.05, 0.12), 1, seed.wrapping_add(1_000_003));
    let target = render(&other, &camera, &opts)?.color;
    Ok(GradCheckCase { scene, camera, target })
}

fn merge(objects: &[PlacedObject]) -> ObjectGaussian {
    let mut prims = Vec::new();
    let mut pts = Vec::new();
    for o in objects {
        let rot = *o.pose.rotation.to_rotation_matrix().matrix();
        for p in &o.scene.primitives {
            let mut q = p.clone();
            q.center = rot * p.center + o.pose.translation.vector;
            q.tangent_u = rot * p.tangent_u;
            q.tangent_v = rot * p.tangent_v;
            pts.push(q.center);
            prims.push(q);
        }
    }
    let bounds = Aabb::from_points(&pts).unwrap_or(Aabb::cube(Vector3::zeros(), 1.0));
    ObjectGaussian::new(prims, bounds)
}

/// Builds the fixture and renders ground-truth images for every camera.
pub fn make_fixture(spec: &FixtureSpec, opts: &RenderOptions) -> Result<Fixture> {
    spec.validate()?;
    let cameras = spec.cameras()?;
    let held_out_cameras = spec.held_out_cameras()?;
    let plane_half = (0.35 * spec.ring.radius).max(1.0);
    let mut floater = None;
    let mut objects = Vec::new();
    let scene = match spec.kind {
        FixtureKind::Plane => plane_scene(spec.count, plane_half, spec.seed),
        FixtureKind::SphereShell => sphere_scene(spec.count, 0.5),
        FixtureKind::TexturedCuboid => cuboid_scene(spec.count, Vector3::new(0.5, 0.35, 0.25), spec.seed),
        FixtureKind::FloaterInjected => {
            let mut s = plane_scene(spec.count, plane_half, spec.seed);
            let mut depths = Vec::new();
            for cam in &cameras {
                let b = render(&s, cam, opts)?;
                depths.extend(b.d_alpha.as_slice().iter().copied().filter(|d| d.is_finite()));
            }
            if depths.is_empty() {
                return Err(invalid("plane is not visible from the ring"));
            }
            depths.sort_by(f64::total_cmp);
            let median = depths[depths.len() / 2];
            let e = spec.ring.elevation_deg.to_radians();
            let height = (spec.ring.radius - 0.5 * median) / e.sin();
            let f = SurfelGaussian::new(
                Vector3::new(0.0, 0.0, height),
                &Matrix3::identity(),
                [0.08, 0.08],
                0.9,
                [0.9, 0.1, 0.1],
            );
            floater = Some(s.primitives.len());
            s.primitives.push(f);
            s.bounds.max.z = s.bounds.max.z.max(height + 0.1);
            s
        }
        FixtureKind::OcclusionPair => {
            let per = (spec.count / 2).max(1);
            let a = sphere_scene(per, 0.3);
            let b = cuboid_scene(
                spec.count.saturating_sub(per).max(1),
                Vector3::new(0.25, 0.25, 0.25),
                spec.seed,
            );
            let rot = UnitQuaternion::from_euler_angles(0.0, 0.0, 0.4);
            objects.push(PlacedObject {
                scene: a,
                pose: Isometry3::from_parts(Translation3::new(0.35, 0.0, 0.0), UnitQuaternion::identity()),
            });
            objects.push(PlacedObject {
                scene: b,
                pose: Isometry3::from_parts(Translation3::new(-0.35, 0.1, 0.0), rot),
            });
            merge(&objects)
        }
    };
    let mut images = Vec::with_capacity(cameras.len());
    let mut masks = Vec::with_capacity(cameras.len());
    for cam in &cameras {
        let b = render(&scene, cam, opts)?;
        masks.push(alpha_to_mask(&b, opts.sigma)?);
        images.push(b.color);
    }
    let held_out_images = held_out_cameras
        .iter()
        .map(|c| render(&scene, c, opts).map(|b| b.color))
        .collect::<Result<Vec<_>>>()?;
    Ok(Fixture {
        spec: *spec,
        scene,
        cameras,
        images,
        masks,
        held_out_cameras,
        held_out_images,
        floater,
        objects,
    })
}

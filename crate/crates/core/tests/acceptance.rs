//! Acceptance suite. Each test covers one numbered criterion and prints a
//! single `PASS` or `FAIL` line with the measured values.
//!
//! Tests take a shared lock so that the runtime bounds are measured without
//! competing test threads.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use std::io::Write;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use objgs::correspondence::generate_correspondence_map;
use objgs::fixtures::{cuboid_scene, make_fixture, random_splat_scene, Fixture, FixtureKind, FixtureSpec, RingSpec};
use objgs::geometry::{build_splat_homography, geometric_depth, ray_splat_intersect};
use objgs::io::{write_scene, PlyFormat};
use objgs::losses::{LossWeights, Phase};
use objgs::optimizer::{
    check_gradient_suite, online_floater_prune, train, FdOptions, FloaterPruneOptions, GivenView, TrainSchedule,
};
use objgs::pose_eval::{metric_add, metric_proj, model_diameter, point_cloud_accuracy, solve_pnp, RansacOptions};
use objgs::raster::psnr;
use objgs::rasterizer::masked_depth;
use objgs::view_synthesis::{sample_pose_perturbation_with, warp_view, PerturbationParams};
use objgs::{render, Aabb, CameraView, Intrinsics, ObjectGaussian, RenderBundle, RenderOptions, RigidPose};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(criterion: u32, title: &str, pass: bool, detail: &str) {
    let line = format!(
        "acceptance {criterion} {}: {title} | {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{}", line.trim_end());
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let n = Normal::new(0.0, 1.0).unwrap();
    let q = nalgebra::Quaternion::new(n.sample(rng), n.sample(rng), n.sample(rng), n.sample(rng));
    *nalgebra::UnitQuaternion::from_quaternion(q)
        .to_rotation_matrix()
        .matrix()
}

fn random_camera(rng: &mut ChaCha8Rng, size: usize) -> CameraView {
    let f = rng.random_range(0.8..1.6) * size as f64;
    let k = Intrinsics::new(
        f,
        f * rng.random_range(0.95..1.05),
        size as f64 / 2.0 + rng.random_range(-2.0..2.0),
        size as f64 / 2.0 + rng.random_range(-2.0..2.0),
    );
    let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
    let elevation = rng.random_range(-1.2..1.2f64);
    let dist = rng.random_range(2.0..4.0);
    let eye = Vector3::new(
        dist * elevation.cos() * azimuth.cos(),
        dist * elevation.cos() * azimuth.sin(),
        dist * elevation.sin(),
    );
    let target = Vector3::new(
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.1..0.1),
    );
    CameraView::look_at(k, size, size, eye, target, Vector3::z()).unwrap()
}

fn given_views(fx: &Fixture) -> Vec<GivenView> {
    fx.cameras
        .iter()
        .zip(&fx.images)
        .zip(&fx.masks)
        .map(|((c, i), m)| GivenView {
            camera: c.clone(),
            image: i.clone(),
            mask: m.clone(),
        })
        .collect()
}

/// World ray through pixel `(x, y)`: origin and a direction whose camera z
/// component is 1, so the ray parameter equals camera depth.
fn pixel_ray(cam: &CameraView, x: f64, y: f64) -> (Vector3<f64>, Vector3<f64>) {
    let k = &cam.intrinsics;
    let local = Vector3::new((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
    let origin = -(cam.rotation.transpose() * cam.translation);
    (origin, cam.rotation.transpose() * local)
}

#[test]
fn criterion_1_ray_splat_intersection() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut max_px, mut max_depth) = (0.0f64, 0.0f64);
    let mut triples = 0;
    while triples < 10_000 {
        let cam = random_camera(&mut rng, 64);
        let r = random_rotation(&mut rng);
        let center = Vector3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        );
        let scale = [rng.random_range(0.02..0.3), rng.random_range(0.02..0.3)];
        let p = objgs::SurfelGaussian::new(center, &r, scale, 0.7, [0.5; 3]);

        let rho: f64 = 3.0 * rng.random::<f64>().sqrt();
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let on_disk =
            p.center + p.tangent_u * (p.scale[0] * rho * phi.cos()) + p.tangent_v * (p.scale[1] * rho * phi.sin());
        let Some((pixel, z)) = cam.project_world(&on_disk) else {
            continue;
        };
        if z < 0.1 {
            continue;
        }

        let hom = build_splat_homography(&p, &cam);
        let (u, v) = ray_splat_intersect(&hom.pixel_planes(pixel.x, pixel.y)).expect("splat is not edge-on");
        let hit = hom.world_point(u, v);
        let (back, _) = cam.project_world(&hit).expect("hit in front of the camera");
        max_px = max_px.max((back - pixel).norm());

        let (origin, dir) = pixel_ray(&cam, pixel.x, pixel.y);
        let n = p.tangent_u.cross(&p.tangent_v);
        let lambda = n.dot(&(p.center - origin)) / n.dot(&dir);
        let depth = geometric_depth(&p, &cam, u, v);
        max_depth = max_depth.max((depth - lambda).abs());
        triples += 1;
    }
    let elapsed = start.elapsed();
    let pass = max_px <= 1e-6 && max_depth <= 1e-9 && elapsed < Duration::from_secs(10);
    report(
        1,
        "ray-splat intersection vs ray-plane oracle",
        pass,
        &format!(
            "{triples} triples, max reprojection {max_px:.3e} px (<= 1e-6), max depth error {max_depth:.3e} m (<= 1e-9), {:.2} s (< 10)",
            secs(elapsed)
        ),
    );
}

const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;

struct Reference {
    color: Vec<[f64; 3]>,
    alpha: Vec<f64>,
    d_alpha: Vec<f64>,
}

/// Per-pixel compositing over every primitive with no bounding boxes, tiles
/// or early termination.
fn brute_force(scene: &ObjectGaussian, cam: &CameraView, opts: &RenderOptions) -> Reference {
    let floor = (-0.5 * opts.cutoff_sigma * opts.cutoff_sigma).exp();
    let origin = -(cam.rotation.transpose() * cam.translation);
    let k = &cam.intrinsics;
    let mut order: Vec<(f64, usize)> = scene
        .primitives
        .iter()
        .enumerate()
        .map(|(i, p)| ((cam.rotation * p.center + cam.translation).z, i))
        .filter(|(z, _)| *z > opts.near_plane)
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let shaded: Vec<([f64; 3], f64, [f64; 2])> = order
        .iter()
        .map(|&(z, i)| {
            let p = &scene.primitives[i];
            let d = (p.center - origin).normalize();
            let mut rgb = [0.0; 3];
            for (ch, out) in rgb.iter_mut().enumerate() {
                *out = 0.5 + SH_C0 * p.color[0][ch];
                if p.color.len() >= 4 && opts.sh_degree >= 1 {
                    *out += SH_C1 * (-d.y * p.color[1][ch] + d.z * p.color[2][ch] - d.x * p.color[3][ch]);
                }
            }
            let c = cam.rotation * p.center + cam.translation;
            let mu = [k.fx * c.x / z + k.cx, k.fy * c.y / z + k.cy];
            (rgb, 1.0 / (1.0 + (-p.opacity_logit).exp()), mu)
        })
        .collect();

    let n_px = cam.width * cam.height;
    let mut out = Reference {
        color: Vec::with_capacity(n_px),
        alpha: Vec::with_capacity(n_px),
        d_alpha: Vec::with_capacity(n_px),
    };
    for py in 0..cam.height {
        for px in 0..cam.width {
            let (x, y) = (px as f64, py as f64);
            let (_, dir) = pixel_ray(cam, x, y);
            let mut trans = 1.0;
            let mut color = [0.0; 3];
            let mut hits: Vec<(f64, f64)> = Vec::new();
            for (&(zc, i), (rgb, opacity, mu)) in order.iter().zip(&shaded) {
                let p = &scene.primitives[i];
                let n = p.tangent_u.cross(&p.tangent_v);
                let denom = n.dot(&dir);
                let (mut rho3, mut d_obj) = (f64::INFINITY, 0.0);
                if denom != 0.0 {
                    let lambda = n.dot(&(p.center - origin)) / denom;
                    let rel = origin + dir * lambda - p.center;
                    let u = rel.dot(&p.tangent_u) / p.scale[0];
                    let v = rel.dot(&p.tangent_v) / p.scale[1];
                    rho3 = u * u + v * v;
                    d_obj = lambda;
                }
                let rho2 = ((x - mu[0]).powi(2) + (y - mu[1]).powi(2)) / (opts.lowpass_radius * opts.lowpass_radius);
                let (raw, depth) = if rho3 <= rho2 {
                    ((-0.5 * rho3).exp(), d_obj)
                } else {
                    ((-0.5 * rho2).exp(), zc)
                };
                let g = (raw - floor) / (1.0 - floor);
                if !(g > 0.0) || !(depth > opts.near_plane) {
                    continue;
                }
                let a = opacity * g;
                let w = trans * a;
                for ch in 0..3 {
                    color[ch] += w * rgb[ch];
                }
                hits.push((w, depth));
                trans *= 1.0 - a;
            }
            for ch in 0..3 {
                color[ch] += trans * opts.background[ch];
            }
            let acc: f64 = hits.iter().map(|h| h.0).sum();
            let d_alpha = if hits.is_empty() {
                f64::NAN
            } else if acc >= opts.sigma {
                hits.iter().map(|h| h.0 * h.1).sum::<f64>() / acc
            } else {
                hits.iter().map(|h| h.1).fold(f64::NEG_INFINITY, f64::max)
            };
            out.color.push(color);
            out.alpha.push(acc);
            out.d_alpha.push(d_alpha);
        }
    }
    out
}

#[test]
fn criterion_2_compositing_equivalence() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut max_color, mut max_alpha, mut max_depth) = (0.0f64, 0.0f64, 0.0f64);
    let mut nan_mismatch = 0;
    let mut covered = 0usize;
    for s in 0..50u64 {
        let n = rng.random_range(16..=512);
        let scene = random_splat_scene(n, (0.03, 0.15), 1, 1_000 + s);
        let cam = random_camera(&mut rng, 64);
        let opts = RenderOptions {
            sh_degree: 1,
            background: [rng.random(), rng.random(), rng.random()],
            ..Default::default()
        };
        let b = render(&scene, &cam, &opts).unwrap();
        let r = brute_force(&scene, &cam, &opts);
        for i in 0..64 * 64 {
            let c = b.color.as_slice()[i];
            for ch in 0..3 {
                max_color = max_color.max((c[ch] - r.color[i][ch]).abs());
            }
            max_alpha = max_alpha.max((b.alpha.as_slice()[i] - r.alpha[i]).abs());
            let (da, dr) = (b.d_alpha.as_slice()[i], r.d_alpha[i]);
            if da.is_nan() != dr.is_nan() {
                nan_mismatch += 1;
            } else if !da.is_nan() {
                covered += 1;
                max_depth = max_depth.max((da - dr).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = max_color <= 1e-5
        && max_alpha <= 1e-5
        && max_depth <= 1e-5
        && nan_mismatch == 0
        && covered > 0
        && elapsed < Duration::from_secs(60);
    report(
        2,
        "tiled renderer vs brute-force compositing",
        pass,
        &format!(
            "50 scenes at 64x64, max |color| {max_color:.3e}, max |alpha| {max_alpha:.3e}, max |d_alpha| {max_depth:.3e} over {covered} covered pixels (all <= 1e-5), coverage mismatches {nan_mismatch}, {:.1} s (< 60)",
            secs(elapsed)
        ),
    );
}

#[test]
fn criterion_3_gradient_verification() {
    let _guard = serial();
    let start = Instant::now();
    let fd = FdOptions::default();
    let suite = check_gradient_suite(0..20, 32, 32, &fd).unwrap();
    let elapsed = start.elapsed();
    let per: Vec<String> = suite
        .per_config
        .iter()
        .map(|(c, r)| format!("{c:?} {}/{} = {:.4}", r.agreeing, r.checked, r.fraction()))
        .collect();
    let all = suite
        .per_config
        .iter()
        .all(|(_, r)| r.fraction() >= 0.99 && r.checked > 0);
    let pass = all && suite.passed && elapsed < Duration::from_secs(600);
    report(
        3,
        "finite differences vs analytic gradients",
        pass,
        &format!(
            "20 scenes, 32 primitives, 32x32, step 1e-4 rel, tol 1e-3, |grad| > 1e-8: {} (each >= 0.99), {:.1} s (< 600)",
            per.join(", "),
            secs(elapsed)
        ),
    );
}

#[test]
fn criterion_4_schedule_conformance() {
    let _guard = serial();
    let start = Instant::now();
    let spec = FixtureSpec {
        count: 96,
        width: 16,
        height: 16,
        focal: 24.0,
        held_out: 0,
        ring: RingSpec {
            count: 2,
            ..FixtureSpec::new(FixtureKind::SphereShell).ring
        },
        ..FixtureSpec::new(FixtureKind::SphereShell)
    };
    let fx = make_fixture(&spec, &RenderOptions::default()).unwrap();
    let init = objgs::init_cuboid_random(Aabb::cube(Vector3::zeros(), 0.6), 32, 4).unwrap();
    let mut schedule = TrainSchedule::default();
    schedule.densify.max_primitives = 64;
    let out = train(
        &init,
        &given_views(&fx),
        &schedule,
        &LossWeights::default(),
        &RenderOptions::default(),
        4,
    )
    .unwrap();
    let recs = &out.log.records;
    let geo_early = recs.iter().filter(|r| r.iteration < 3_000 && r.geo != 0.0).count();
    let normal_early = recs.iter().filter(|r| r.iteration < 7_000 && r.normal != 0.0).count();
    let geo_late = recs.iter().filter(|r| r.iteration >= 3_000 && r.geo > 0.0).count();
    let normal_late = recs.iter().filter(|r| r.iteration >= 7_000 && r.normal != 0.0).count();
    let synth: Vec<usize> = recs
        .iter()
        .filter(|r| r.phase == Phase::Synthetic)
        .map(|r| r.iteration)
        .collect();
    let first = synth.first().copied().unwrap_or(0);
    let last = synth.last().copied().unwrap_or(0);
    let post = schedule.total_iters - schedule.warp_create_iter + 1;
    let span = last + 2 - schedule.warp_create_iter;
    let fraction = span as f64 / post as f64;
    let elapsed = start.elapsed();
    let pass = recs.len() == 30_000
        && geo_early == 0
        && normal_early == 0
        && geo_late > 0
        && normal_late > 0
        && first >= 4_999
        && !out.synthetic.is_empty()
        && (fraction - 0.4).abs() <= 1.0 / post as f64;
    report(
        4,
        "loss activation and synthetic-view schedule",
        pass,
        &format!(
            "{} iterations, nonzero geo before 3000: {geo_early}, nonzero normal before 7000: {normal_early}, geo active after: {geo_late}, normal active after: {normal_late}, {} synthetic views, first synthetic iteration {first} (>= 4999), last {last}, span {span}/{post} = {fraction:.5} (0.4), {:.1} s",
            recs.len(),
            out.synthetic.len(),
            secs(elapsed)
        ),
    );
}

#[test]
fn criterion_5_sparse_view_fitting() {
    let _guard = serial();
    let start = Instant::now();
    let opts = RenderOptions::default();
    let fx = make_fixture(&FixtureSpec::new(FixtureKind::SphereShell), &opts).unwrap();
    let init = objgs::init_cuboid_random(Aabb::cube(Vector3::zeros(), 0.6), 1024, 1).unwrap();
    let mut schedule = TrainSchedule::default().scaled(0.2);
    schedule.densify.max_primitives = 3_000;
    let weights = LossWeights {
        lambda_geo: 10.0,
        ..Default::default()
    };
    let out = train(&init, &given_views(&fx), &schedule, &weights, &opts, 1).unwrap();
    let eval_opts = RenderOptions {
        sh_degree: schedule.sh_degree,
        ..opts.clone()
    };
    let psnrs: Vec<f64> = fx
        .held_out_cameras
        .iter()
        .zip(&fx.held_out_images)
        .map(|(c, gt)| psnr(&render(&out.scene, c, &eval_opts).unwrap().color, gt).unwrap())
        .collect();
    let mean_psnr = psnrs.iter().sum::<f64>() / psnrs.len() as f64;
    let threshold = 3.0 * fx.scene.mean_scale();
    let acc = point_cloud_accuracy(&out.scene.centers(), &fx.scene.centers(), threshold).unwrap();
    let elapsed = start.elapsed();
    let pass = psnrs.iter().all(|&p| p >= 25.0) && acc >= 0.90 && elapsed <= Duration::from_secs(900);
    report(
        5,
        "sphere shell from 10 views plus 2 synthetic per view",
        pass,
        &format!(
            "held-out PSNR {} dB (each >= 25, mean {mean_psnr:.2}), accuracy at {threshold:.4} m = {acc:.4} (>= 0.90), {} synthetic views, {} primitives, {:.1} s (<= 900)",
            psnrs.iter().map(|p| format!("{p:.2}")).collect::<Vec<_>>().join("/"),
            out.synthetic.len(),
            out.scene.len(),
            secs(elapsed)
        ),
    );
}

#[test]
fn criterion_6_floater_pruning() {
    let _guard = serial();
    let start = Instant::now();
    let opts = RenderOptions::default();
    let fx = make_fixture(&FixtureSpec::new(FixtureKind::FloaterInjected), &opts).unwrap();
    let floater = fx.floater.expect("fixture has a floater");
    let gt = fx.surface();
    let threshold = 3.0 * gt.mean_scale();
    let before = point_cloud_accuracy(&fx.scene.centers(), &gt.centers(), threshold).unwrap();
    let mut scene = fx.scene.clone();
    let r = online_floater_prune(&mut scene, &fx.cameras, &opts, &FloaterPruneOptions::default()).unwrap();
    let after = point_cloud_accuracy(&scene.centers(), &gt.centers(), threshold).unwrap();
    let elapsed = start.elapsed();
    let pass = r.removed == vec![floater] && scene == gt && after > before && elapsed < Duration::from_secs(60);
    report(
        6,
        "online floater pruning at tau 0.05, k 3",
        pass,
        &format!(
            "removed {:?} (floater {floater}) of {} primitives, accuracy {before:.5} -> {after:.5} (strictly higher), {:.2} s (< 60)",
            r.removed,
            fx.scene.len(),
            secs(elapsed)
        ),
    );
}

#[test]
fn criterion_7_warp_identity_and_perturbations() {
    let _guard = serial();
    let opts = RenderOptions::default();
    let fx = make_fixture(&FixtureSpec::new(FixtureKind::TexturedCuboid), &opts).unwrap();
    let mut mismatched = 0;
    let mut valid = 0;
    let mut missing = 0;
    for (cam, img) in fx.cameras.iter().zip(&fx.images) {
        let b = render(&fx.scene, cam, &opts).unwrap();
        let depth = masked_depth(&b, opts.sigma);
        let w = warp_view(img, &depth, cam, &nalgebra::Isometry3::identity()).unwrap();
        for i in 0..img.len() {
            let d = depth.as_slice()[i];
            if w.validity.as_slice()[i] {
                valid += 1;
                if w.image.as_slice()[i] != img.as_slice()[i] {
                    mismatched += 1;
                }
            } else if d.is_finite() && d > 0.0 {
                missing += 1;
            }
        }
    }

    let params = PerturbationParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut max_angle = 0.0f64;
    for _ in 0..1_000 {
        let m = sample_pose_perturbation_with(&params, &mut rng).unwrap();
        max_angle = max_angle.max(m.rotation.angle().to_degrees());
    }
    let pass = mismatched == 0 && missing == 0 && valid > 0 && max_angle <= 45.0;
    report(
        7,
        "identity warp and perturbation cap",
        pass,
        &format!(
            "identity: {valid} valid pixels, {mismatched} differ from the source, {missing} depth pixels not valid; 1000 perturbations (std {} deg, cap {} deg): max rotation {max_angle:.3} deg (<= 45)",
            params.rot_std_deg, params.rot_cap_deg
        ),
    );
}

fn perturbed_observations(
    map: &objgs::correspondence::CorrespondenceMap,
    rng: &mut ChaCha8Rng,
) -> Vec<objgs::pose_eval::Observation> {
    let noise = Normal::new(0.0, 0.5).unwrap();
    map.observations()
        .into_iter()
        .map(|mut o| {
            o.pixel[0] += noise.sample(rng);
            o.pixel[1] += noise.sample(rng);
            o
        })
        .collect()
}

#[test]
fn criterion_8_correspondence_pose_round_trip() {
    let _guard = serial();
    let start = Instant::now();
    let half = Vector3::new(0.12, 0.08, 0.05);
    let object = cuboid_scene(600, half, 8);
    let model = object.centers();
    let extent = 2.0 * half.max();
    let diameter = model_diameter(&model);
    let k = Intrinsics::new(150.0, 150.0, 63.5, 63.5);
    let camera = CameraView::new(k, 128, 128, nalgebra::Isometry3::identity());
    let opts = RenderOptions::default();
    let ransac = RansacOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let (mut max_rot, mut max_trans) = (0.0f64, 0.0f64);
    let (mut add_ok, mut proj_ok) = (0, 0);
    let (mut worst_add, mut worst_proj) = (0.0f64, 0.0f64);
    let mut min_entries = usize::MAX;
    for _ in 0..100 {
        let pose = RigidPose::new(
            random_rotation(&mut rng),
            Vector3::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(0.8..1.4),
            ),
        );
        let map = generate_correspondence_map(&object, &camera, &pose, &opts).unwrap();
        min_entries = min_entries.min(map.entries.len());
        let exact = solve_pnp(&map.observations(), &k, &ransac).unwrap();
        max_rot = max_rot.max(exact.pose.rotation_error(&map.pose).to_degrees());
        max_trans = max_trans.max(exact.pose.translation_error(&map.pose));

        let noisy = solve_pnp(&perturbed_observations(&map, &mut rng), &k, &ransac).unwrap();
        let add = metric_add(&noisy.pose, &map.pose, &model, diameter, false).unwrap();
        let proj = metric_proj(&noisy.pose, &map.pose, &model, &k, 5.0).unwrap();
        add_ok += add.correct as usize;
        proj_ok += proj.correct as usize;
        worst_add = worst_add.max(add.distance / diameter);
        worst_proj = worst_proj.max(proj.mean_px);
    }
    let elapsed = start.elapsed();
    let pass = max_rot < 0.1
        && max_trans < 1e-3 * extent
        && add_ok == 100
        && proj_ok == 100
        && elapsed < Duration::from_secs(120);
    report(
        8,
        "correspondence map to PnP round trip",
        pass,
        &format!(
            "100 poses, >= {min_entries} correspondences each; noiseless max rotation {max_rot:.2e} deg (< 0.1), max translation {max_trans:.2e} m (< {:.1e}); 0.5 px noise: ADD-0.1d {add_ok}/100 (worst {worst_add:.4} d), Proj@5px {proj_ok}/100 (worst {worst_proj:.3} px); {:.1} s (< 120)",
            1e-3 * extent,
            secs(elapsed)
        ),
    );
}

fn bits(b: &RenderBundle) -> Vec<u64> {
    let mut out = Vec::new();
    for c in b.color.as_slice().iter().chain(b.normal.as_slice()) {
        out.extend(c.iter().map(|v| v.to_bits()));
    }
    for m in [&b.alpha, &b.d_alpha, &b.d_peak] {
        out.extend(m.as_slice().iter().map(|v| v.to_bits()));
    }
    for i in 0..b.contributors.num_pixels() {
        for c in b.contributors.pixel(i) {
            out.extend([c.id as u64, c.weight.to_bits(), c.depth.to_bits(), c.alpha_g.to_bits()]);
        }
    }
    out
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn criterion_9_determinism() {
    let _guard = serial();
    let start = Instant::now();
    let opts = RenderOptions::default();
    let spec = FixtureSpec {
        count: 256,
        width: 24,
        height: 24,
        focal: 36.0,
        ring: RingSpec {
            count: 4,
            ..FixtureSpec::new(FixtureKind::SphereShell).ring
        },
        ..FixtureSpec::new(FixtureKind::SphereShell)
    };
    let fx = make_fixture(&spec, &opts).unwrap();
    let views = given_views(&fx);
    let init = objgs::init_cuboid_random(Aabb::cube(Vector3::zeros(), 0.6), 256, 3).unwrap();
    let mut schedule = TrainSchedule::default().scaled(0.02);
    schedule.densify.max_primitives = 1_024;
    let fit = |threads: usize| {
        let out = in_pool(threads, || {
            train(&init, &views, &schedule, &LossWeights::default(), &opts, 42).unwrap()
        });
        let mut bytes = Vec::new();
        write_scene(&out.scene, PlyFormat::BinaryLittleEndian, &mut bytes).unwrap();
        (bytes, out.log.to_tsv())
    };
    let (a, log_a) = fit(1);
    let (b, log_b) = fit(8);
    let fits_equal = a == b && log_a == log_b;

    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut render_mismatch = 0;
    let mut renders = 0;
    for s in 0..4u64 {
        let scene = random_splat_scene(512, (0.03, 0.15), 3, 9_000 + s);
        let cam = random_camera(&mut rng, 64);
        let reference = bits(&in_pool(1, || render(&scene, &cam, &opts).unwrap()));
        for threads in [2, 8] {
            renders += 1;
            if bits(&in_pool(threads, || render(&scene, &cam, &opts).unwrap())) != reference {
                render_mismatch += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = fits_equal && render_mismatch == 0;
    report(
        9,
        "byte-identical fits and thread-count-independent renders",
        pass,
        &format!(
            "fits in 1- and 8-thread pools: scene files {} ({} bytes), metrics logs {}; renders at 2/8 threads vs 1: {render_mismatch}/{renders} differ; {:.1} s",
            if a == b { "identical" } else { "differ" },
            a.len(),
            if log_a == log_b { "identical" } else { "differ" },
            secs(elapsed)
        ),
    );
}

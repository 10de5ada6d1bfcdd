//! Subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use objgs::camera::{CameraView, RigidPose};
use objgs::correspondence::{compose_occluded_scene, generate_correspondence_map, Background, SceneObject};
use objgs::fixtures::{make_fixture, FixtureKind, FixtureSpec};
use objgs::io::{
    load_scene, read_color_png, read_json, read_mask_png, read_pfm, read_scalar_pfm, save_scene, write_color_png,
    write_json, write_mask_png, write_pfm, write_scalar_pfm, CameraSet, CorrespondenceSidecar, PfmData, PlyFormat,
    RenderSidecar, UNITS,
};
use objgs::optimizer::{check_gradient_suite, train, GivenView};
use objgs::pose_eval::{solve_pnp, AccuracyTable, EvalReport, ObjectEval, Observation, PoseEstimate, RansacOptions};
use objgs::rasterizer::alpha_to_mask;
use objgs::scene::{init_cuboid_random, Aabb, ObjectGaussian};
use objgs::view_synthesis::{about_pivot, euler_xyz_intrinsic, sample_pose_perturbation_with, warp_view};
use objgs::{Error, Mask};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Config, Effective};
use crate::{
    ComposeArgs, CorrespondArgs, EvalArgs, FitArgs, FixtureArgs, InitArgs, RenderArgs, VerifyGradArgs, WarpArgs,
};

fn prepare_dir<A: Serialize>(dir: &Path, command: &str, args: &A, cfg: &Config) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let effective = Effective {
        command,
        arguments: args,
        config: cfg,
    };
    write_json(&dir.join("effective_config.json"), &effective)?;
    Ok(())
}

fn parent(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn scene_from(path: &Path) -> Result<ObjectGaussian> {
    load_scene(path).with_context(|| format!("loading scene {}", path.display()))
}

fn cameras_from(path: &Path) -> Result<(CameraSet, Vec<CameraView>)> {
    let set: CameraSet = read_json(path).with_context(|| format!("loading cameras {}", path.display()))?;
    let views = set
        .views()
        .with_context(|| format!("invalid camera in {}", path.display()))?;
    if views.is_empty() {
        bail!("{} lists no cameras", path.display());
    }
    Ok((set, views))
}

fn selected(views: &[CameraView], index: Option<usize>) -> Result<Vec<(usize, CameraView)>> {
    match index {
        None => Ok(views.iter().cloned().enumerate().collect()),
        Some(i) => views
            .get(i)
            .map(|c| vec![(i, c.clone())])
            .ok_or_else(|| anyhow!("camera index {i} out of range ({} cameras)", views.len())),
    }
}

/// Parses exactly `n` comma-separated numbers.
fn floats(text: &str, n: usize, flag: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| anyhow!("--{flag} expects {n} comma-separated numbers, got '{text}'"))?;
    if v.len() != n {
        bail!("--{flag} expects {n} comma-separated numbers, got {}", v.len());
    }
    Ok(v)
}

fn vec3(text: &str, flag: &str) -> Result<Vector3<f64>> {
    let v = floats(text, 3, flag)?;
    Ok(Vector3::new(v[0], v[1], v[2]))
}

pub fn init(a: &InitArgs, cfg: &mut Config) -> Result<()> {
    if let Some(n) = a.n {
        cfg.init.n = n;
    }
    if let Some(b) = &a.bounds {
        cfg.init.bounds.copy_from_slice(&floats(b, 6, "bounds")?);
    }
    cfg.init.ascii |= a.ascii;
    let b = cfg.init.bounds;
    let bounds = Aabb::new(Vector3::new(b[0], b[1], b[2]), Vector3::new(b[3], b[4], b[5]));
    let scene = init_cuboid_random(bounds, cfg.init.n, cfg.seed())?;
    prepare_dir(&a.out_dir, "init", a, cfg)?;
    let format = if cfg.init.ascii {
        PlyFormat::Ascii
    } else {
        PlyFormat::BinaryLittleEndian
    };
    save_scene(&scene, &a.out_dir.join("scene.ply"), format)?;
    log::info!(
        "wrote {} primitives to {}",
        scene.len(),
        a.out_dir.join("scene.ply").display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct PlacedFile {
    name: String,
    scene: PathBuf,
    /// Object-to-world pose.
    pose: RigidPose,
}

pub fn fixture(a: &FixtureArgs, cfg: &mut Config) -> Result<()> {
    if let Some(k) = &a.kind {
        cfg.fixture.kind = k.parse::<FixtureKind>()?;
    }
    if let Some(c) = a.count {
        cfg.fixture.count = c;
    }
    if let Some(v) = a.views {
        cfg.fixture.views = v;
    }
    if let Some(s) = a.size {
        cfg.fixture.size = s;
    }
    let mut spec = FixtureSpec::new(cfg.fixture.kind);
    spec.count = cfg.fixture.count;
    spec.ring.count = cfg.fixture.views;
    spec.held_out = cfg.fixture.held_out;
    spec.focal *= cfg.fixture.size as f64 / spec.width as f64;
    spec.width = cfg.fixture.size;
    spec.height = cfg.fixture.size;
    spec.seed = cfg.seed();
    let fx = make_fixture(&spec, &cfg.render)?;
    let dir = &a.out_dir;
    prepare_dir(dir, "fixture", a, cfg)?;
    save_scene(&fx.scene, &dir.join("gt.ply"), PlyFormat::BinaryLittleEndian)?;

    let mut set = CameraSet::from_cameras(&fx.cameras);
    for (i, c) in set.cameras.iter_mut().enumerate() {
        c.image = Some(format!("view_{i:03}.png").into());
        c.mask = Some(format!("mask_{i:03}.png").into());
    }
    write_json(&dir.join("cameras.json"), &set)?;
    let mut held = CameraSet::from_cameras(&fx.held_out_cameras);
    for (i, c) in held.cameras.iter_mut().enumerate() {
        c.image = Some(format!("held_out_{i:03}.png").into());
    }
    write_json(&dir.join("held_out.json"), &held)?;
    (0..fx.cameras.len()).into_par_iter().try_for_each(|i| -> Result<()> {
        write_color_png(&dir.join(format!("view_{i:03}.png")), &fx.images[i])?;
        write_mask_png(&dir.join(format!("mask_{i:03}.png")), &fx.masks[i])?;
        Ok(())
    })?;
    for (i, img) in fx.held_out_images.iter().enumerate() {
        write_color_png(&dir.join(format!("held_out_{i:03}.png")), img)?;
    }
    let mut placed = Vec::new();
    for (k, o) in fx.objects.iter().enumerate() {
        let name = format!("object_{k}.ply");
        save_scene(&o.scene, &dir.join(&name), PlyFormat::BinaryLittleEndian)?;
        placed.push(PlacedFile {
            name: format!("object_{k}"),
            scene: name.into(),
            pose: RigidPose::from_isometry(&o.pose),
        });
    }
    if !placed.is_empty() {
        write_json(&dir.join("objects.json"), &placed)?;
    }
    write_json(
        &dir.join("fixture.json"),
        &serde_json::json!({
            "units": UNITS,
            "kind": spec.kind,
            "primitives": fx.scene.len(),
            "floater_index": fx.floater,
            "views": fx.cameras.len(),
            "held_out": fx.held_out_cameras.len(),
        }),
    )?;
    log::info!(
        "fixture {:?} with {} views written to {}",
        spec.kind,
        fx.cameras.len(),
        dir.display()
    );
    Ok(())
}

pub fn fit(a: &FitArgs, cfg: &mut Config) -> Result<()> {
    if a.schedule_scale.is_some() {
        cfg.fit.schedule_scale = a.schedule_scale;
    }
    if let Some(l) = a.lambda_geo {
        cfg.fit.weights.lambda_geo = l;
    }
    if let Some(l) = a.lambda_normal {
        cfg.fit.weights.lambda_normal = l;
    }
    if let Some(m) = a.max_primitives {
        cfg.fit.schedule.densify.max_primitives = m;
    }
    let mut schedule = match cfg.fit.schedule_scale {
        Some(s) => cfg.fit.schedule.scaled(s),
        None => cfg.fit.schedule.clone(),
    };
    if let Some(n) = a.iters {
        schedule.total_iters = n;
    }
    schedule.validate()?;

    let init = scene_from(&a.scene)?;
    let (set, cams) = cameras_from(&a.cameras)?;
    let base = parent(&a.cameras);
    let views = set
        .cameras
        .par_iter()
        .zip(cams)
        .enumerate()
        .map(|(i, (file, camera))| -> Result<GivenView> {
            let (img, mask) = file.resolve(&base);
            let img = img.ok_or_else(|| anyhow!("camera {i} names no image"))?;
            let image = read_color_png(&img).with_context(|| format!("reading {}", img.display()))?;
            let mask = match mask {
                Some(m) => read_mask_png(&m).with_context(|| format!("reading {}", m.display()))?,
                None => {
                    log::warn!("camera {i} has no mask; using the full frame");
                    Mask::filled(camera.width, camera.height, true)
                }
            };
            image.ensure_dims(camera.width, camera.height)?;
            mask.ensure_dims(camera.width, camera.height)?;
            Ok(GivenView { camera, image, mask })
        })
        .collect::<Result<Vec<_>>>()?;

    prepare_dir(&a.out_dir, "fit", a, cfg)?;
    log::info!(
        "fitting {} primitives to {} views for {} iterations",
        init.len(),
        views.len(),
        schedule.total_iters
    );
    match train(&init, &views, &schedule, &cfg.fit.weights, &cfg.render, cfg.seed()) {
        Ok(out) => {
            save_scene(&out.scene, &a.out_dir.join("scene.ply"), PlyFormat::BinaryLittleEndian)?;
            out.log
                .write_tsv(std::fs::File::create(a.out_dir.join("metrics.tsv"))?)?;
            log::info!("fitted scene has {} primitives", out.scene.len());
            Ok(())
        }
        Err(Error::Diverged {
            iteration,
            detail,
            checkpoint,
        }) => {
            let path = a.out_dir.join("checkpoint.ply");
            save_scene(&checkpoint, &path, PlyFormat::BinaryLittleEndian)?;
            bail!(
                "training diverged at iteration {iteration}: {detail}; last finite scene saved to {}",
                path.display()
            )
        }
        Err(e) => Err(e.into()),
    }
}

pub fn render(a: &RenderArgs, cfg: &Config) -> Result<()> {
    let scene = scene_from(&a.scene)?;
    let (_, cams) = cameras_from(&a.cameras)?;
    let jobs = selected(&cams, a.index)?;
    prepare_dir(&a.out_dir, "render", a, cfg)?;
    let opts = &cfg.render;
    jobs.par_iter().try_for_each(|(i, cam)| -> Result<()> {
        let b = objgs::render(&scene, cam, opts)?;
        let mask = alpha_to_mask(&b, opts.sigma)?;
        let dir = &a.out_dir;
        let mut side = RenderSidecar::new(b.width, b.height, b.intrinsics, opts.sigma, b.visible);
        let mut put = |role: &str, name: String| {
            side.files.insert(role.into(), name.clone());
            dir.join(name)
        };
        write_color_png(&put("color", format!("color_{i:03}.png")), &b.color)?;
        write_mask_png(&put("mask", format!("mask_{i:03}.png")), &mask)?;
        write_scalar_pfm(&put("d_alpha", format!("d_alpha_{i:03}.pfm")), &b.d_alpha)?;
        write_scalar_pfm(&put("d_peak", format!("d_peak_{i:03}.pfm")), &b.d_peak)?;
        write_scalar_pfm(&put("alpha", format!("alpha_{i:03}.pfm")), &b.alpha)?;
        write_pfm(&put("normal", format!("normal_{i:03}.pfm")), &b.normal)?;
        write_json(&dir.join(format!("render_{i:03}.json")), &side)?;
        Ok(())
    })?;
    log::info!("rendered {} view(s) to {}", jobs.len(), a.out_dir.display());
    Ok(())
}

pub fn warp(a: &WarpArgs, cfg: &Config) -> Result<()> {
    let (_, cams) = cameras_from(&a.cameras)?;
    let cam = selected(&cams, Some(a.index))?.remove(0).1;
    let source = read_color_png(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let depth = read_scalar_pfm(&a.depth).with_context(|| format!("reading {}", a.depth.display()))?;
    let perturbation = match &a.rotation_deg {
        Some(r) => {
            let r = vec3(r, "rotation-deg")?;
            let t = match &a.translation {
                Some(t) => vec3(t, "translation")?,
                None => Vector3::zeros(),
            };
            Isometry3::from_parts(
                Translation3::from(t),
                UnitQuaternion::from_rotation_matrix(&euler_xyz_intrinsic(
                    r.x.to_radians(),
                    r.y.to_radians(),
                    r.z.to_radians(),
                )),
            )
        }
        None => {
            if a.translation.is_some() {
                bail!("--translation requires --rotation-deg");
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
            sample_pose_perturbation_with(&cfg.warp, &mut rng)?
        }
    };
    let pivot = match &a.pivot {
        Some(p) => vec3(p, "pivot")?,
        None => {
            let finite: Vec<f64> = depth
                .as_slice()
                .iter()
                .copied()
                .filter(|d| d.is_finite() && *d > 0.0)
                .collect();
            if finite.is_empty() {
                bail!("source depth has no valid pixel");
            }
            Vector3::new(0.0, 0.0, finite.iter().sum::<f64>() / finite.len() as f64)
        }
    };
    let transform = about_pivot(&perturbation, &pivot);
    let warped = warp_view(&source, &depth, &cam, &transform)?;
    prepare_dir(&a.out_dir, "warp", a, cfg)?;
    let dir = &a.out_dir;
    write_color_png(&dir.join("warped.png"), &warped.image)?;
    write_mask_png(&dir.join("validity.png"), &warped.validity)?;
    write_scalar_pfm(&dir.join("warped_depth.pfm"), &warped.depth)?;
    write_json(
        &dir.join("target_camera.json"),
        &CameraSet::from_cameras(std::slice::from_ref(&warped.target_camera)),
    )?;
    let q = perturbation.rotation;
    write_json(
        &dir.join("warp.json"),
        &serde_json::json!({
            "units": UNITS,
            "perturbation_rotation_wxyz": [q.w, q.i, q.j, q.k],
            "perturbation_rotation_deg": q.angle().to_degrees(),
            "perturbation_translation": perturbation.translation.vector.as_slice(),
            "pivot_camera": pivot.as_slice(),
            "valid_pixels": warped.validity.count(),
            "empty": warped.empty,
        }),
    )?;
    if warped.empty {
        log::warn!("no source pixel landed inside the target frame");
    }
    Ok(())
}

pub fn correspond(a: &CorrespondArgs, cfg: &Config) -> Result<()> {
    let scene = scene_from(&a.scene)?;
    let (_, cams) = cameras_from(&a.cameras)?;
    let pose: RigidPose = match &a.pose {
        Some(p) => read_json(p).with_context(|| format!("reading pose {}", p.display()))?,
        None => RigidPose::identity(),
    };
    let jobs = selected(&cams, a.index)?;
    prepare_dir(&a.out_dir, "correspond", a, cfg)?;
    jobs.par_iter().try_for_each(|(i, cam)| -> Result<()> {
        let map = generate_correspondence_map(&scene, cam, &pose, &cfg.render)?;
        if map.invalid_depth > 0 {
            log::warn!("view {i}: {} mask pixels without a finite depth", map.invalid_depth);
        }
        let (xyz, mask) = (format!("xyz_{i:03}.pfm"), format!("mask_{i:03}.png"));
        write_pfm(&a.out_dir.join(&xyz), &map.xyz_image())?;
        write_mask_png(&a.out_dir.join(&mask), &map.mask)?;
        write_json(
            &a.out_dir.join(format!("corr_{i:03}.json")),
            &CorrespondenceSidecar::new(&map, &xyz, &mask),
        )?;
        Ok(())
    })?;
    Ok(())
}

pub fn compose(a: &ComposeArgs, cfg: &Config) -> Result<()> {
    let placed: Vec<PlacedFile> = read_json(&a.objects).with_context(|| format!("reading {}", a.objects.display()))?;
    let base = parent(&a.objects);
    let objects = placed
        .iter()
        .map(|p| -> Result<SceneObject> {
            let path = if p.scene.is_absolute() {
                p.scene.clone()
            } else {
                base.join(&p.scene)
            };
            Ok(SceneObject {
                scene: scene_from(&path)?,
                pose: p.pose,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let background = if a.background == "transparent" {
        Background::Transparent
    } else {
        let v = vec3(&a.background, "background")?;
        Background::Color([v.x, v.y, v.z])
    };
    let (_, cams) = cameras_from(&a.cameras)?;
    let cam = selected(&cams, Some(a.index))?.remove(0).1;
    let comp = compose_occluded_scene(&objects, &cam, background, &cfg.render)?;
    prepare_dir(&a.out_dir, "compose", a, cfg)?;
    let dir = &a.out_dir;
    write_color_png(&dir.join("composite.png"), &comp.image)?;
    write_mask_png(&dir.join("coverage.png"), &comp.coverage)?;
    for (k, p) in placed.iter().enumerate() {
        let (xyz, mask) = (format!("xyz_{k}.pfm"), format!("visible_{k}.png"));
        write_mask_png(&dir.join(&mask), &comp.visible[k])?;
        write_mask_png(&dir.join(format!("amodal_{k}.png")), &comp.amodal[k])?;
        write_pfm(&dir.join(&xyz), &comp.maps[k].xyz_image())?;
        let side = CorrespondenceSidecar::new(&comp.maps[k], &xyz, &mask);
        write_json(&dir.join(format!("corr_{k}.json")), &side)?;
        log::info!("{}: {} visible pixels", p.name, comp.visible[k].count());
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct EvalObjectSpec {
    name: String,
    /// Object model (PLY); its primitive centers are the model points.
    model: PathBuf,
    /// Correspondence sidecar (JSON) next to its XYZ map and mask.
    correspondences: PathBuf,
    /// Ground-truth object-to-camera pose; the sidecar pose when absent.
    #[serde(default)]
    gt_pose: Option<RigidPose>,
    #[serde(default)]
    symmetric: bool,
}

#[derive(Serialize, Deserialize)]
struct CloudSpec {
    pred: PathBuf,
    gt: PathBuf,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalSpec {
    #[serde(default)]
    objects: Vec<EvalObjectSpec>,
    #[serde(default)]
    point_cloud: Option<CloudSpec>,
}

fn observations(sidecar_path: &Path) -> Result<(CorrespondenceSidecar, Vec<Observation>)> {
    let side: CorrespondenceSidecar =
        read_json(sidecar_path).with_context(|| format!("reading {}", sidecar_path.display()))?;
    let base = parent(sidecar_path);
    let PfmData::Color(xyz) = read_pfm(&base.join(&side.xyz_file))? else {
        bail!("{} is not a three-channel PFM", side.xyz_file);
    };
    let mask = read_mask_png(&base.join(&side.mask_file))?;
    mask.ensure_dims(xyz.width(), xyz.height())?;
    let mut obs = Vec::new();
    for y in 0..xyz.height() {
        for x in 0..xyz.width() {
            let p = xyz.get(x, y);
            if *mask.get(x, y) && p.iter().all(|v| v.is_finite()) {
                obs.push(Observation {
                    pixel: [x as f64, y as f64],
                    point: Vector3::new(p[0], p[1], p[2]),
                });
            }
        }
    }
    Ok((side, obs))
}

#[derive(Serialize)]
struct PnpSummary<'a> {
    name: &'a str,
    estimate: &'a PoseEstimate,
    correspondences: usize,
}

pub fn eval(a: &EvalArgs, cfg: &Config) -> Result<()> {
    let spec: EvalSpec = read_json(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
    if spec.objects.is_empty() && spec.point_cloud.is_none() {
        bail!("evaluation spec lists nothing to evaluate");
    }
    let base = parent(&a.spec);
    let at = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let opts = RansacOptions {
        seed: cfg.seed(),
        ..cfg.pnp
    };
    let mut objects = Vec::new();
    let mut estimates = Vec::new();
    for o in &spec.objects {
        let model = scene_from(&at(&o.model))?.centers();
        let (side, obs) = observations(&at(&o.correspondences))?;
        let est =
            solve_pnp(&obs, &side.intrinsics, &opts).with_context(|| format!("solving the pose of {}", o.name))?;
        let gt = o.gt_pose.unwrap_or(side.object_to_camera);
        objects.push(ObjectEval::evaluate(
            &o.name,
            &est.pose,
            &gt,
            &model,
            &side.intrinsics,
            o.symmetric,
        )?);
        estimates.push((o.name.clone(), est, obs.len()));
    }
    let point_cloud = match &spec.point_cloud {
        Some(c) => Some(AccuracyTable::standard(
            &scene_from(&at(&c.pred))?.centers(),
            &scene_from(&at(&c.gt))?.centers(),
        )?),
        None => None,
    };
    let report = EvalReport::new(objects, point_cloud);
    prepare_dir(&a.out_dir, "eval", a, cfg)?;
    write_json(&a.out_dir.join("report.json"), &report)?;
    let pnp: Vec<PnpSummary> = estimates
        .iter()
        .map(|(name, estimate, n)| PnpSummary {
            name,
            estimate,
            correspondences: *n,
        })
        .collect();
    write_json(&a.out_dir.join("pnp.json"), &pnp)?;
    for o in &report.objects {
        println!(
            "{}: ADD{} {:.4} m ({}), Proj {:.3} px ({})",
            o.name,
            if o.symmetric { "-S" } else { "" },
            o.add.distance,
            if o.add.correct { "correct" } else { "wrong" },
            o.proj.mean_px,
            if o.proj.correct { "correct" } else { "wrong" }
        );
    }
    if let Some(t) = &report.point_cloud {
        for (th, acc) in t.thresholds_mm.iter().zip(&t.accuracy) {
            println!("point accuracy @ {th} mm: {acc:.4}");
        }
    }
    Ok(())
}

pub fn verify_grad(a: &VerifyGradArgs, cfg: &mut Config) -> Result<()> {
    if let Some(s) = a.seeds {
        cfg.grad.seeds = s;
    }
    if let Some(p) = a.primitives {
        cfg.grad.primitives = p;
    }
    if let Some(s) = a.size {
        cfg.grad.size = s;
    }
    let g = &cfg.grad;
    let report = check_gradient_suite(0..g.seeds, g.primitives, g.size, &g.fd)?;
    for (config, r) in &report.per_config {
        println!(
            "{config:?}: {}/{} coordinates agree ({:.4})",
            r.agreeing,
            r.checked,
            r.fraction()
        );
    }
    let p = &report.pooled;
    println!(
        "pooled: {}/{} = {:.4} (required {:.4}), max relative error {:.3e}",
        p.agreeing,
        p.checked,
        p.fraction(),
        g.fd.required_fraction,
        p.max_rel_error
    );
    if let Some(dir) = &a.out_dir {
        prepare_dir(dir, "verify-grad", a, cfg)?;
        write_json(&dir.join("gradient_report.json"), &report)?;
    }
    if !report.passed {
        bail!("gradient check failed for at least one loss configuration");
    }
    Ok(())
}

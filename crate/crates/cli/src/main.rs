//! `objgs`: command-line front end.
//!
//! Every subcommand writes into `--out-dir`, including an
//! `effective_config.json` with the merged configuration. Settings come from
//! command-line flags, then `--config <file.json>`, then built-in defaults.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::Config;

#[derive(Parser, Debug)]
#[command(name = "objgs", version, about = "Object-centric surfel Gaussians toolkit")]
struct Cli {
    /// Seed of every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Use seed 0 when no seed is given instead of a clock-derived one.
    #[arg(long, global = true)]
    deterministic: bool,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Random cuboid initialization.
    Init(InitArgs),
    /// Write a synthetic toy dataset (ground-truth scene, cameras, images, masks).
    Fixture(FixtureArgs),
    /// Fit a scene to posed images.
    Fit(FitArgs),
    /// Render color, mask, depths and normals.
    Render(RenderArgs),
    /// Forward-warp a view to a perturbed pose.
    Warp(WarpArgs),
    /// Dense 2D-3D correspondence maps.
    Correspond(CorrespondArgs),
    /// Occluded multi-object composite with per-object masks and maps.
    Compose(ComposeArgs),
    /// PnP pose recovery and pose / point-cloud metrics.
    Eval(EvalArgs),
    /// Finite-difference check of the analytic gradients.
    VerifyGrad(VerifyGradArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct InitArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of primitives.
    #[arg(long)]
    pub n: Option<usize>,
    /// `minx,miny,minz,maxx,maxy,maxz` in meters.
    #[arg(long, allow_hyphen_values = true)]
    pub bounds: Option<String>,
    /// Write the text PLY variant.
    #[arg(long)]
    pub ascii: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// plane, sphere-shell, textured-cuboid, floater-injected or occlusion-pair.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    /// Image width and height, pixels.
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct FitArgs {
    /// Initial scene (PLY).
    #[arg(long)]
    pub scene: PathBuf,
    /// Camera set (JSON) whose entries name an image and a mask.
    #[arg(long)]
    pub cameras: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Total iterations (other boundaries unchanged).
    #[arg(long)]
    pub iters: Option<usize>,
    /// Multiply every iteration count of the schedule.
    #[arg(long)]
    pub schedule_scale: Option<f64>,
    #[arg(long)]
    pub lambda_geo: Option<f64>,
    #[arg(long)]
    pub lambda_normal: Option<f64>,
    #[arg(long)]
    pub max_primitives: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub cameras: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Render only this camera of the set.
    #[arg(long)]
    pub index: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct WarpArgs {
    /// Source color (PNG).
    #[arg(long)]
    pub image: PathBuf,
    /// Source blended depth (PFM), meters.
    #[arg(long)]
    pub depth: PathBuf,
    #[arg(long)]
    pub cameras: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Intrinsic X-Y-Z Euler angles, degrees; sampled when absent.
    #[arg(long, allow_hyphen_values = true)]
    pub rotation_deg: Option<String>,
    /// Translation, meters (camera frame).
    #[arg(long, allow_hyphen_values = true)]
    pub translation: Option<String>,
    /// Rotation pivot in camera coordinates; defaults to the mean depth on the optical axis.
    #[arg(long, allow_hyphen_values = true)]
    pub pivot: Option<String>,
}

#[derive(Args, Debug, Serialize)]
pub struct CorrespondArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub cameras: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub index: Option<usize>,
    /// Object-to-world pose (JSON `{rotation, translation}`); identity when absent.
    #[arg(long)]
    pub pose: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ComposeArgs {
    /// JSON list of `{name, scene, pose}` with scene paths relative to the file.
    #[arg(long)]
    pub objects: PathBuf,
    #[arg(long)]
    pub cameras: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// `transparent` or `r,g,b` in [0, 1].
    #[arg(long, default_value = "transparent")]
    pub background: String,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    /// JSON evaluation spec (objects with model, correspondences and ground-truth pose; optional point clouds).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct VerifyGradArgs {
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Number of random scenes.
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub primitives: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = Config::load(cli.config.as_deref())?;
    cfg.resolve_globals(cli.seed, cli.threads, cli.deterministic);
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    match &cli.command {
        Command::Init(a) => commands::init(a, &mut cfg),
        Command::Fixture(a) => commands::fixture(a, &mut cfg),
        Command::Fit(a) => commands::fit(a, &mut cfg),
        Command::Render(a) => commands::render(a, &cfg),
        Command::Warp(a) => commands::warp(a, &cfg),
        Command::Correspond(a) => commands::correspond(a, &cfg),
        Command::Compose(a) => commands::compose(a, &cfg),
        Command::Eval(a) => commands::eval(a, &cfg),
        Command::VerifyGrad(a) => commands::verify_grad(a, &mut cfg),
    }
}

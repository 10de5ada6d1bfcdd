//! Layered run configuration: command-line flag over config file over
//! built-in default. The merged result is written to every output directory.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use objgs::fixtures::FixtureKind;
use objgs::losses::LossWeights;
use objgs::optimizer::{FdOptions, TrainSchedule};
use objgs::pose_eval::RansacOptions;
use objgs::view_synthesis::PerturbationParams;
use objgs::RenderOptions;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub n: usize,
    /// `[min x, min y, min z, max x, max y, max z]`, meters.
    pub bounds: [f64; 6],
    pub ascii: bool,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            n: 4096,
            bounds: [-0.5, -0.5, -0.5, 0.5, 0.5, 0.5],
            ascii: false,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub schedule: TrainSchedule,
    pub weights: LossWeights,
    /// Multiplies every iteration count of the schedule.
    pub schedule_scale: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradConfig {
    pub seeds: u64,
    pub primitives: usize,
    pub size: usize,
    pub fd: FdOptions,
}

impl Default for GradConfig {
    fn default() -> Self {
        Self {
            seeds: 20,
            primitives: 32,
            size: 32,
            fd: FdOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureConfig {
    pub kind: FixtureKind,
    pub count: usize,
    pub views: usize,
    pub size: usize,
    pub held_out: usize,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            kind: FixtureKind::SphereShell,
            count: 512,
            views: 10,
            size: 64,
            held_out: 2,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub deterministic: bool,
    pub render: RenderOptions,
    pub init: InitConfig,
    pub fit: FitConfig,
    pub warp: PerturbationParams,
    pub pnp: RansacOptions,
    pub grad: GradConfig,
    pub fixture: FixtureConfig,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    /// Applies global flags and fixes the seed. Without `--deterministic`
    /// and without any seed, one is drawn from the clock and recorded.
    pub fn resolve_globals(&mut self, seed: Option<u64>, threads: Option<usize>, deterministic: bool) {
        self.deterministic |= deterministic;
        if seed.is_some() {
            self.seed = seed;
        }
        if threads.is_some() {
            self.threads = threads;
        }
        if self.seed.is_none() {
            self.seed = Some(if self.deterministic {
                0
            } else {
                SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_nanos() as u64)
                    .unwrap_or(0)
            });
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

/// Written as `effective_config.json` into each output directory.
#[derive(Serialize)]
pub struct Effective<'a, A: Serialize> {
    pub command: &'a str,
    pub arguments: &'a A,
    pub config: &'a Config,
}

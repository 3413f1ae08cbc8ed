//! Experiment configuration, sweeps, aggregation and plots.

pub mod aggregate;
pub mod config;
pub mod plot;
pub mod sweep;

use std::path::Path;

pub use aggregate::{aggregate, AggregateRow};
pub use config::ExperimentConfig;
pub use sweep::{expand_sweep, run_sweep, Method, TrialContext, TrialDescriptor, TrialResult};

use crate::render::{add_pixel_noise, camera_seed, render, CameraIntrinsics};
use crate::scene::SceneModel;
use crate::servo::TrajectoryLog;
use crate::{seed, Result};

/// Re-render the reference view of every logged step, with the same noise the
/// run saw, as `frame_<k>.ppm`.
pub fn dump_frames(
    log: &TrajectoryLog,
    scene: &SceneModel,
    intrinsics: &CameraIntrinsics,
    sigma: f64,
    rng_seed: u64,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for s in &log.steps {
        let step_seed = seed::derive(rng_seed, s.k as u64);
        let img = add_pixel_noise(&render(&s.ee_pose, intrinsics, scene), sigma, camera_seed(step_seed, 0))?;
        img.write_ppm(&dir.join(format!("frame_{:04}.ppm", s.k)))?;
    }
    Ok(())
}

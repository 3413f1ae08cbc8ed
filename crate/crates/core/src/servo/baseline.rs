//! Single depth camera approaching the segmented target in a straight line.

use super::log::{ServoStep, TrajectoryLog};
use super::mts::LostCounter;
use super::{clear_motion, next_pose, objective, roll_pitch_correction, ServoConfig, ServoSetup, Termination};
use crate::render::{add_pixel_noise, camera_seed, render, CameraIntrinsics};
use crate::scene::{ray_hit, HitKind, SceneModel};
use crate::segment::{centroid, segment, target_score, SegmentationModel};
use crate::{seed, Result};

/// Closed loop: every step re-segments, re-reads the depth under the mask
/// centroid and moves `alpha` meters toward that point (less the clearance).
pub fn run_baseline(
    scene: &SceneModel,
    setup: &ServoSetup,
    intrinsics: &CameraIntrinsics,
    seg_model: &SegmentationModel,
    config: &ServoConfig,
) -> Result<TrajectoryLog> {
    config.validate()?;
    intrinsics.validate()?;
    let arm = &setup.arm;
    let m_scale = if config.normalize_manipulability {
        let m0 = arm.manipulability(&setup.start_q);
        if m0 > 0.0 { m0 } else { 1.0 }
    } else {
        1.0
    };

    let mut pose = setup.start_pose;
    let mut q = setup.start_q;
    let mut steps = Vec::new();
    let mut lost = LostCounter::new(config.lost_after);

    for k in 0..config.max_steps {
        // same noise stream as the proposed method's reference camera
        let step_seed = seed::derive(config.rng_seed, k as u64);
        let image = add_pixel_noise(&render(&pose, intrinsics, scene), config.sigma, camera_seed(step_seed, 0))?;
        let mask = segment(&image, seg_model);
        let p_ref = target_score(&mask);
        let m_ref = arm.manipulability(&q) / m_scale;
        let f_ref = objective(p_ref, m_ref, config.w1, config.w2);
        let center = centroid(&mask).map(|(u, v)| (u + 0.5, v + 0.5));
        let correction = roll_pitch_correction(center, intrinsics);
        steps.push(ServoStep {
            k,
            ee_pose: pose,
            q,
            p_ref,
            p_cameras: Vec::new(),
            m_values: vec![m_ref],
            f_ref,
            gradient: None,
            roll_pitch_correction: correction,
            limit_violations: arm.limit_violations(&q),
        });

        if lost.observe(k, p_ref) {
            return TrajectoryLog::from_steps(steps, Termination::TargetLost);
        }
        if p_ref >= config.p_max {
            return TrajectoryLog::from_steps(steps, Termination::ScoreReached);
        }
        if k + 1 == config.max_steps {
            break;
        }

        let origin = pose.translation.vector;
        let world = match center {
            Some((u, v)) => {
                let dir = pose.rotation * intrinsics.ray_direction(u, v);
                let hit = ray_hit(&origin, &dir, scene);
                if hit.kind == HitKind::Background {
                    nalgebra::zero()
                } else {
                    dir * config.alpha.min((hit.distance - config.clearance).max(0.0))
                }
            }
            None => nalgebra::zero(),
        };
        let world = clear_motion(&origin, &world, scene, config.clearance);
        let commanded = next_pose(&pose, &world, correction);
        match arm.inverse_kinematics(&commanded, &q) {
            Ok(sol) => {
                q = sol.q;
                pose = arm.forward_kinematics(&q);
            }
            Err(e) => {
                log::debug!("baseline step {k}: {e}");
                return TrajectoryLog::from_steps(steps, Termination::IkFailed);
            }
        }
    }
    TrajectoryLog::from_steps(steps, Termination::MaxSteps)
}

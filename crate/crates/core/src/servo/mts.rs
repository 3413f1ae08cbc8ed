//! The multi-camera gradient-ascent loop.

use rayon::prelude::*;

use super::log::{ServoStep, TrajectoryLog};
use super::{
    clear_motion, delta_f, direction_matrix, estimate_gradient, next_pose, objective,
    roll_pitch_correction, should_stop, ServoConfig, ServoSetup, StopDecision, Termination,
};
use crate::render::{array_views, CameraArray};
use crate::scene::SceneModel;
use crate::segment::{centroid, segment, target_score, SegmentationModel};
use crate::{seed, Result};

/// Outcome of checking the reference mask against the lost-target rule.
pub(crate) struct LostCounter {
    empty_run: usize,
    limit: usize,
}

impl LostCounter {
    pub(crate) fn new(limit: usize) -> Self {
        Self { empty_run: 0, limit }
    }

    /// Record one reference score; true once the target counts as lost.
    pub(crate) fn observe(&mut self, k: usize, p_ref: f64) -> bool {
        if p_ref > 0.0 {
            self.empty_run = 0;
            return false;
        }
        self.empty_run += 1;
        k == 0 || self.empty_run >= self.limit
    }
}

pub fn run_3dmts(
    scene: &SceneModel,
    setup: &ServoSetup,
    array: &CameraArray,
    seg_model: &SegmentationModel,
    config: &ServoConfig,
) -> Result<TrajectoryLog> {
    config.validate()?;
    let v = direction_matrix(array)?;
    let arm = &setup.arm;
    let n = array.len();
    let m_scale = if config.normalize_manipulability {
        let m0 = arm.manipulability(&setup.start_q);
        if m0 > 0.0 { m0 } else { 1.0 }
    } else {
        1.0
    };

    let mut pose = setup.start_pose;
    let mut q = setup.start_q;
    let mut steps = Vec::new();
    let mut history = Vec::new();
    let mut lost = LostCounter::new(config.lost_after);

    for k in 0..config.max_steps {
        let views = array_views(&pose, array, scene, config.sigma, seed::derive(config.rng_seed, k as u64))?;
        let mask = segment(&views.reference, seg_model);
        let p_ref = target_score(&mask);
        let p_cameras: Vec<f64> = views
            .offset
            .par_iter()
            .map(|img| target_score(&segment(img, seg_model)))
            .collect();

        let m_ref = arm.manipulability(&q) / m_scale;
        let mut m_values = vec![m_ref];
        let mut peripheral_ik_ok = true;
        if config.w2 > 0.0 {
            let ms: Vec<Option<f64>> = array
                .camera_poses(&pose)
                .par_iter()
                .map(|cam| {
                    arm.inverse_kinematics(cam, &q)
                        .ok()
                        .map(|sol| arm.manipulability(&sol.q) / m_scale)
                })
                .collect();
            peripheral_ik_ok = ms.iter().all(Option::is_some);
            m_values.extend(ms.into_iter().map(|m| m.unwrap_or(f64::NAN)));
        } else {
            m_values.extend(std::iter::repeat_n(f64::NAN, n));
        }

        let f_ref = objective(p_ref, m_ref, config.w1, config.w2);
        let f_cameras: Vec<f64> = p_cameras
            .iter()
            .zip(&m_values[1..])
            .map(|(p, m)| objective(*p, *m, config.w1, config.w2))
            .collect();
        let gradient = if peripheral_ik_ok {
            Some(estimate_gradient(&v, &delta_f(f_ref, &f_cameras))?)
        } else {
            None
        };
        let correction = roll_pitch_correction(
            centroid(&mask).map(|(u, v)| (u + 0.5, v + 0.5)),
            &array.intrinsics,
        );
        steps.push(ServoStep {
            k,
            ee_pose: pose,
            q,
            p_ref,
            p_cameras,
            m_values,
            f_ref,
            gradient: gradient.clone(),
            roll_pitch_correction: correction,
            limit_violations: arm.limit_violations(&q),
        });

        let Some(gradient) = gradient else {
            log::debug!("step {k}: peripheral IK failed");
            return TrajectoryLog::from_steps(steps, Termination::IkFailed);
        };
        history.push(gradient.clone());
        if lost.observe(k, p_ref) {
            return TrajectoryLog::from_steps(steps, Termination::TargetLost);
        }
        if let StopDecision::Stop(t) = should_stop(&history, p_ref, config) {
            return TrajectoryLog::from_steps(steps, t);
        }
        if k + 1 == config.max_steps {
            break;
        }

        let mut world = pose.rotation * (gradient.grad * config.alpha);
        let len = world.norm();
        if len > config.max_translation {
            world *= config.max_translation / len;
        }
        let world = clear_motion(&pose.translation.vector, &world, scene, config.clearance);
        let commanded = next_pose(&pose, &world, correction);
        match arm.inverse_kinematics(&commanded, &q) {
            Ok(sol) => {
                q = sol.q;
                pose = arm.forward_kinematics(&q);
            }
            Err(e) => {
                log::debug!("step {k}: {e}");
                return TrajectoryLog::from_steps(steps, Termination::IkFailed);
            }
        }
    }
    TrajectoryLog::from_steps(steps, Termination::MaxSteps)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::kinematics::ArmModel;
    use crate::render::CameraIntrinsics;
    use crate::scene::{build_scene, SceneConfig};
    use crate::servo::look_at_pose;
    use crate::Vec3;

    pub(crate) fn fixture(with_occluder: bool, occ: (f64, f64)) -> (SceneModel, ServoSetup, CameraArray, SegmentationModel) {
        let cfg = SceneConfig { with_occluder, ..SceneConfig::default() };
        let scene = build_scene((0.0, 0.0), occ, 0.0, &cfg).unwrap();
        let start = look_at_pose(&cfg.viewpoint(), &scene.target.center).unwrap();
        let setup = ServoSetup::new(ArmModel::default_arm(), start).unwrap();
        let intr = CameraIntrinsics::new(64, 64, 60f64.to_radians()).unwrap();
        let array = CameraArray::with_radius(0.06, intr).unwrap();
        (scene, setup, array, SegmentationModel::default())
    }

    #[test]
    fn lost_counter_rules() {
        let mut c = LostCounter::new(3);
        assert!(c.observe(0, 0.0));
        let mut c = LostCounter::new(3);
        assert!(!c.observe(0, 0.1));
        assert!(!c.observe(1, 0.0));
        assert!(!c.observe(2, 0.0));
        assert!(!c.observe(3, 0.2));
        assert!(!c.observe(4, 0.0));
        assert!(!c.observe(5, 0.0));
        assert!(c.observe(6, 0.0));
    }

    #[test]
    fn unoccluded_run_reaches_score() {
        let (scene, setup, array, seg) = fixture(false, (0.0, 0.0));
        let log = run_3dmts(&scene, &setup, &array, &seg, &ServoConfig::default()).unwrap();
        assert_eq!(log.termination, Termination::ScoreReached, "{} steps", log.steps.len());
        assert!(log.a_end >= 0.4);
        // trend: no step loses more than a few pixels
        for w in log.steps.windows(2) {
            assert!(w[1].p_ref >= w[0].p_ref - 5.0 / 4096.0);
        }
    }

    #[test]
    fn zero_step_size_holds_position() {
        let (scene, setup, array, seg) = fixture(false, (0.0, 0.0));
        let cfg = ServoConfig { alpha: 0.0, sigma: 0.0, max_steps: 20, ..Default::default() };
        let log = run_3dmts(&scene, &setup, &array, &seg, &cfg).unwrap();
        assert!(matches!(log.termination, Termination::GradientConverged | Termination::MaxSteps));
        let p0 = log.steps[0].ee_pose.translation.vector;
        for s in &log.steps {
            assert!((s.ee_pose.translation.vector - p0).norm() < 1e-5);
        }
        assert_eq!(log.delta_a(), 0.0);
    }

    #[test]
    fn runs_are_deterministic() {
        let (scene, setup, array, seg) = fixture(true, (0.1, 0.0));
        let cfg = ServoConfig { sigma: 0.01, rng_seed: 99, max_steps: 30, ..Default::default() };
        let a = run_3dmts(&scene, &setup, &array, &seg, &cfg).unwrap();
        let b = run_3dmts(&scene, &setup, &array, &seg, &cfg).unwrap();
        assert_eq!(a.to_csv_string().unwrap(), b.to_csv_string().unwrap());
    }

    #[test]
    fn manipulability_is_skipped_without_weight() {
        let (scene, setup, array, seg) = fixture(true, (0.1, 0.0));
        let cfg = ServoConfig { max_steps: 15, ..Default::default() };
        let log = run_3dmts(&scene, &setup, &array, &seg, &cfg).unwrap();
        for s in &log.steps {
            assert!(s.m_values[1..].iter().all(|m| m.is_nan()));
            assert!(s.m_values[0].is_finite());
            assert_eq!(s.f_ref, s.p_ref);
        }
    }

    #[test]
    fn manipulability_weight_changes_objective() {
        let (scene, setup, array, seg) = fixture(false, (0.0, 0.0));
        let cfg = ServoConfig { w1: 0.8, w2: 0.2, max_steps: 3, ..Default::default() };
        let log = run_3dmts(&scene, &setup, &array, &seg, &cfg).unwrap();
        let s = &log.steps[0];
        assert!(s.m_values.iter().all(|m| m.is_finite() && *m > 0.0));
        assert!((s.f_ref - (0.8 * s.p_ref + 0.2 * s.m_values[0])).abs() < 1e-15);
    }

    #[test]
    fn hidden_target_is_lost_immediately() {
        let (scene, setup, array, seg) = fixture(false, (0.0, 0.0));
        let mut scene = scene;
        // put the target behind the camera
        scene.target.center = setup.start_pose.translation.vector - Vec3::new(0.5, 0.0, 0.0);
        let far = setup;
        let log = run_3dmts(&scene, &far, &array, &seg, &ServoConfig::default()).unwrap();
        assert_eq!(log.termination, Termination::TargetLost);
        assert_eq!(log.steps.len(), 1);
    }
}

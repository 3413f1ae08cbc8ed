//! Objective, stopping rules and the two servo loops.

pub mod baseline;
pub mod gradient;
pub mod log;
pub mod mts;

use std::fmt;
use std::str::FromStr;

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use crate::error::config_err;
use crate::kinematics::{ArmModel, JointConfig};
use crate::render::CameraIntrinsics;
use crate::scene::{ray_hit, SceneModel};
use crate::{Error, Pose, Result, Vec3};

pub use baseline::run_baseline;
pub use gradient::{delta_f, direction_matrix, estimate_gradient, GradientEstimate};
pub use log::{ServoStep, TrajectoryLog};
pub use mts::run_3dmts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServoConfig {
    pub w1: f64,
    pub w2: f64,
    /// Meters per unit gradient for the proposed method, meters per step for
    /// the baseline.
    pub alpha: f64,
    pub epsilon: f64,
    pub p_max: f64,
    pub window_m: usize,
    pub max_steps: usize,
    pub sigma: f64,
    pub rng_seed: u64,
    /// Per-step translation cap, meters.
    pub max_translation: f64,
    /// Closest the camera may approach any surface along its motion, meters.
    pub clearance: f64,
    /// Consecutive empty reference masks before giving up.
    pub lost_after: usize,
    /// Divide manipulability by its start value before weighting.
    pub normalize_manipulability: bool,
}

impl Default for ServoConfig {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 0.0,
            alpha: 0.02,
            epsilon: 0.02,
            p_max: 0.4,
            window_m: 3,
            max_steps: 200,
            sigma: 0.001,
            rng_seed: 0,
            max_translation: 0.05,
            clearance: 0.02,
            lost_after: 3,
            normalize_manipulability: false,
        }
    }
}

impl ServoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w1 >= 0.0 && self.w2 >= 0.0) || (self.w1 + self.w2 - 1.0).abs() > 1e-12 {
            return Err(config_err(format!(
                "weights must be non-negative and sum to 1, got ({}, {})",
                self.w1, self.w2
            )));
        }
        if !(self.alpha >= 0.0) {
            return Err(config_err(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.p_max > 0.0 && self.p_max <= 1.0) {
            return Err(config_err(format!("p_max must be in (0, 1], got {}", self.p_max)));
        }
        if !(self.epsilon >= 0.0) {
            return Err(config_err(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.window_m == 0 || self.max_steps == 0 || self.lost_after == 0 {
            return Err(config_err("window_m, max_steps and lost_after must be >= 1"));
        }
        if !(self.sigma >= 0.0) {
            return Err(config_err(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.max_translation > 0.0 && self.clearance >= 0.0) {
            return Err(config_err("max_translation must be > 0 and clearance >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientConverged,
    ScoreReached,
    MaxSteps,
    TargetLost,
    IkFailed,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::GradientConverged => "gradient_converged",
            Termination::ScoreReached => "score_reached",
            Termination::MaxSteps => "max_steps",
            Termination::TargetLost => "target_lost",
            Termination::IkFailed => "ik_failed",
        }
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Termination {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gradient_converged" => Termination::GradientConverged,
            "score_reached" => Termination::ScoreReached,
            "max_steps" => Termination::MaxSteps,
            "target_lost" => Termination::TargetLost,
            "ik_failed" => Termination::IkFailed,
            other => return Err(config_err(format!("unknown termination '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop(Termination),
}

pub fn objective(p: f64, m: f64, w1: f64, w2: f64) -> f64 {
    if w2 == 0.0 {
        // keeps f finite when m was skipped
        return w1 * p;
    }
    w1 * p + w2 * m
}

/// Roll (about camera x) and pitch (about camera y) that turn the optical
/// axis toward the target centroid. `centroid` is in continuous pixel
/// coordinates, `(0, 0)` at the top-left image corner.
pub fn roll_pitch_correction(centroid: Option<(f64, f64)>, intrinsics: &CameraIntrinsics) -> (f64, f64) {
    let Some((u, v)) = centroid else {
        return (0.0, 0.0);
    };
    let du = (u - intrinsics.cx) / intrinsics.width as f64;
    let dv = (v - intrinsics.cy) / intrinsics.height as f64;
    // +y is image-down, and a positive turn about x tilts the axis toward -y
    (-dv * intrinsics.vfov(), du * intrinsics.hfov)
}

/// Score ceiling first, then the windowed mean gradient norm.
pub fn should_stop(history: &[GradientEstimate], p_ref: f64, config: &ServoConfig) -> StopDecision {
    if p_ref >= config.p_max {
        return StopDecision::Stop(Termination::ScoreReached);
    }
    if history.len() >= config.window_m {
        let window = &history[history.len() - config.window_m..];
        let mean = window.iter().map(GradientEstimate::norm).sum::<f64>() / window.len() as f64;
        if mean <= config.epsilon {
            return StopDecision::Stop(Termination::GradientConverged);
        }
    }
    StopDecision::Continue
}

/// Shorten a world-frame translation so the camera keeps `clearance` from
/// the first surface along its path.
pub fn clear_motion(origin: &Vec3, delta: &Vec3, scene: &SceneModel, clearance: f64) -> Vec3 {
    let len = delta.norm();
    if len == 0.0 {
        return *delta;
    }
    let dir = delta / len;
    let hit = ray_hit(origin, &dir, scene);
    let allowed = (hit.distance - clearance).max(0.0);
    if allowed < len {
        dir * allowed
    } else {
        *delta
    }
}

/// Next end-effector pose: translate in world, then apply roll and pitch in
/// the rotated frame.
pub fn next_pose(pose: &Pose, world_delta: &Vec3, correction: (f64, f64)) -> Pose {
    let (roll, pitch) = correction;
    let turn = UnitQuaternion::from_axis_angle(&Vec3::x_axis(), roll)
        * UnitQuaternion::from_axis_angle(&Vec3::y_axis(), pitch);
    let mut out = *pose;
    out.translation.vector += world_delta;
    out.rotation = pose.rotation * turn;
    out
}

/// Orientation of the start camera: optical axis along world +x, image
/// right along world -y, image down along world -z.
pub fn default_start_orientation() -> UnitQuaternion<f64> {
    let r = nalgebra::Matrix3::new(
        0.0, 0.0, 1.0, //
        -1.0, 0.0, 0.0, //
        0.0, -1.0, 0.0,
    );
    UnitQuaternion::from_matrix(&r)
}

/// Start pose looking at `look_at` from `position`, with the image rows kept
/// level.
pub fn look_at_pose(position: &Vec3, look_at: &Vec3) -> Result<Pose> {
    let z = (look_at - position)
        .try_normalize(1e-9)
        .ok_or_else(|| config_err("start position coincides with the look-at point"))?;
    let down = -Vec3::z();
    let x = down
        .cross(&z)
        .try_normalize(1e-9)
        .ok_or_else(|| config_err("viewing direction is vertical"))?;
    let y = z.cross(&x);
    let r = nalgebra::Matrix3::from_columns(&[x, y, z]);
    let rot = nalgebra::Rotation3::from_matrix_unchecked(r);
    Ok(Pose::from_parts(
        nalgebra::Translation3::from(*position),
        UnitQuaternion::from_rotation_matrix(&rot),
    ))
}

/// Joint configuration reaching `pose`, with the redundant joint spent on
/// manipulability.
pub fn start_configuration(arm: &ArmModel, pose: &Pose) -> Result<JointConfig> {
    use crate::kinematics::IkConfig;
    let cfg = IkConfig {
        max_iterations: 2000,
        ..IkConfig::default()
    };
    let seeds = [
        [0.0, 0.6, 0.0, -1.5, 0.0, 0.9, 0.0],
        [0.0, 0.3, 0.0, -1.8, 0.0, -1.2, 0.0],
        [0.0, -0.3, 0.0, 1.8, 0.0, 1.2, 0.0],
        [0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0],
    ];
    let mut last_err = None;
    for s in seeds {
        let seed = JointConfig::from_slice(&s)?;
        match arm.inverse_kinematics_with(pose, &seed, &cfg) {
            Ok(sol) if arm.limit_violations(&sol.q).is_empty() => {
                return arm.maximize_manipulability(&sol.q, 100);
            }
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| config_err("no start configuration within joint limits")))
}

/// Everything a servo run needs besides the scene.
#[derive(Debug, Clone)]
pub struct ServoSetup {
    pub arm: ArmModel,
    pub start_pose: Pose,
    pub start_q: JointConfig,
}

impl ServoSetup {
    pub fn new(arm: ArmModel, start_pose: Pose) -> Result<Self> {
        let start_q = start_configuration(&arm, &start_pose)?;
        Ok(Self {
            arm,
            start_pose,
            start_q,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_6;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(64, 48, 60f64.to_radians()).unwrap()
    }

    #[test]
    fn objective_cases() {
        assert_eq!(objective(0.3, 123.0, 1.0, 0.0), 0.3);
        assert!((objective(0.25, 0.5, 0.8, 0.2) - 0.3).abs() < 1e-15);
        assert_eq!(objective(0.0, 0.0, 0.8, 0.2), 0.0);
        assert_eq!(objective(0.3, f64::NAN, 1.0, 0.0), 0.3);
    }

    #[test]
    fn config_validation() {
        assert!(ServoConfig::default().validate().is_ok());
        let bad = [
            ServoConfig { w1: 0.7, ..Default::default() },
            ServoConfig { w1: 1.2, w2: -0.2, ..Default::default() },
            ServoConfig { p_max: 0.0, ..Default::default() },
            ServoConfig { alpha: -1.0, ..Default::default() },
            ServoConfig { window_m: 0, ..Default::default() },
            ServoConfig { sigma: -0.1, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn correction_cases() {
        let i = intr();
        assert_eq!(roll_pitch_correction(Some((32.0, 24.0)), &i), (0.0, 0.0));
        let (roll, pitch) = roll_pitch_correction(Some((64.0, 24.0)), &i);
        assert_eq!(roll, 0.0);
        assert!((pitch - FRAC_PI_6).abs() < 1e-12);
        // a quarter width right and a quarter height up
        let (roll, pitch) = roll_pitch_correction(Some((48.0, 12.0)), &i);
        assert!((roll - i.vfov() / 4.0).abs() < 1e-12);
        assert!((pitch - i.hfov / 4.0).abs() < 1e-12);
        assert_eq!(roll_pitch_correction(None, &i), (0.0, 0.0));
    }

    #[test]
    fn correction_turns_axis_toward_centroid() {
        let i = intr();
        for (u, v) in [(50.0, 10.0), (5.0, 40.0), (60.0, 44.0), (10.0, 3.0)] {
            let target_dir = i.ray_direction(u, v);
            let turned = next_pose(&Pose::identity(), &Vec3::zeros(), roll_pitch_correction(Some((u, v)), &i));
            let axis = turned.rotation * Vec3::z();
            assert!(axis.dot(&target_dir) > Vec3::z().dot(&target_dir), "({u}, {v})");
        }
    }

    fn est(norm: f64) -> GradientEstimate {
        GradientEstimate {
            grad: Vec3::new(norm, 0.0, 0.0),
            residual_norm: 0.0,
            per_camera_delta_f: vec![],
        }
    }

    #[test]
    fn stopping_rules() {
        let cfg = ServoConfig { epsilon: 1.5, p_max: 0.4, window_m: 3, ..Default::default() };
        let h = vec![est(5.0)];
        assert_eq!(should_stop(&h, 0.4, &cfg), StopDecision::Stop(Termination::ScoreReached));
        let h = vec![est(1.6), est(1.6), est(1.6)];
        assert_eq!(should_stop(&h, 0.1, &cfg), StopDecision::Continue);
        let h = vec![est(0.0), est(0.0), est(0.0)];
        assert_eq!(should_stop(&h, 0.1, &cfg), StopDecision::Stop(Termination::GradientConverged));
        // the window must be full before the gradient test applies
        let h = vec![est(0.0)];
        assert_eq!(should_stop(&h, 0.1, &cfg), StopDecision::Continue);
        // only the last window counts
        let h = vec![est(0.0), est(0.0), est(9.0), est(1.0), est(1.0), est(1.0)];
        assert_eq!(should_stop(&h, 0.1, &cfg), StopDecision::Stop(Termination::GradientConverged));
    }

    #[test]
    fn termination_round_trip() {
        for t in [
            Termination::GradientConverged,
            Termination::ScoreReached,
            Termination::MaxSteps,
            Termination::TargetLost,
            Termination::IkFailed,
        ] {
            assert_eq!(t.as_str().parse::<Termination>().unwrap(), t);
        }
        assert!("bogus".parse::<Termination>().is_err());
    }

    #[test]
    fn start_orientation_matches_look_at() {
        let a = default_start_orientation();
        let b = look_at_pose(&Vec3::new(0.0, 0.6, 0.4), &Vec3::new(0.5, 0.6, 0.4)).unwrap();
        assert!(a.angle_to(&b.rotation) < 1e-12);
        assert!((a * Vec3::z() - Vec3::x()).norm() < 1e-12);
        assert!((a * Vec3::x() + Vec3::y()).norm() < 1e-12);
    }

    #[test]
    fn start_configuration_reaches_pose_and_is_dexterous() {
        let arm = ArmModel::default_arm();
        let pose = look_at_pose(&Vec3::new(0.0, 0.6, 0.4), &Vec3::new(0.5, 0.6, 0.4)).unwrap();
        let q = start_configuration(&arm, &pose).unwrap();
        let fk = arm.forward_kinematics(&q);
        assert!((fk.translation.vector - pose.translation.vector).norm() < 1e-5);
        assert!(fk.rotation.angle_to(&pose.rotation) < 1e-4);
        assert!(arm.limit_violations(&q).is_empty());
        // no nearby self-motion configuration is more than 10% better
        let m0 = arm.manipulability(&q);
        let n = arm.null_space(&q);
        assert_eq!(n.len(), 1);
        for s in [-0.2, -0.1, -0.05, 0.05, 0.1, 0.2] {
            let trial = JointConfig(q.0 + n[0] * s);
            let sol = arm.inverse_kinematics(&pose, &trial).unwrap();
            assert!(arm.manipulability(&sol.q) <= 1.1 * m0, "step {s}");
        }
    }

    #[test]
    fn motion_is_clipped_before_surfaces() {
        use crate::scene::{build_scene, SceneConfig};
        let scene = build_scene((0.0, 0.0), (0.0, 0.0), 0.0, &SceneConfig::default()).unwrap();
        let origin = Vec3::new(0.0, 0.6, 0.4);
        // occluder plane sits at x = 0.35
        let d = clear_motion(&origin, &Vec3::new(1.0, 0.0, 0.0), &scene, 0.02);
        assert!((d.x - 0.33).abs() < 1e-9);
        let small = Vec3::new(0.01, 0.0, 0.0);
        assert_eq!(clear_motion(&origin, &small, &scene, 0.02), small);
        assert_eq!(clear_motion(&origin, &Vec3::zeros(), &scene, 0.02), Vec3::zeros());
    }
}

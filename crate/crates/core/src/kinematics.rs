//! Seven-joint serial arm in standard Denavit-Hartenberg form.

use std::path::Path;

use nalgebra::{DMatrix, Matrix6, SMatrix, SVector, Translation3, UnitQuaternion, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::config_err;
use crate::{Error, Pose, Result, Vec3};

pub const DOF: usize = 7;

pub type Jacobian = SMatrix<f64, 6, DOF>;

/// One standard DH row: `Rz(theta + theta_offset) Tz(d) Tx(a) Rx(alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    #[serde(default)]
    pub theta_offset: f64,
}

impl DhRow {
    pub fn transform(&self, theta: f64) -> Pose {
        let z = Pose::from_parts(
            Translation3::new(0.0, 0.0, self.d),
            UnitQuaternion::from_axis_angle(&Vec3::z_axis(), theta + self.theta_offset),
        );
        let x = Pose::from_parts(
            Translation3::new(self.a, 0.0, 0.0),
            UnitQuaternion::from_axis_angle(&Vec3::x_axis(), self.alpha),
        );
        z * x
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointConfig(pub SVector<f64, DOF>);

impl JointConfig {
    pub fn zeros() -> Self {
        Self(SVector::zeros())
    }

    pub fn from_slice(q: &[f64]) -> Result<Self> {
        if q.len() != DOF {
            return Err(config_err(format!("expected {DOF} joint values, got {}", q.len())));
        }
        Ok(Self(SVector::from_column_slice(q)))
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmModel {
    pub dh_rows: Vec<DhRow>,
    pub joint_limits: Vec<(f64, f64)>,
    pub base_pose: Pose,
}

/// On-disk arm description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmFile {
    #[serde(default)]
    pub base_position: [f64; 3],
    /// Base orientation as roll, pitch, yaw, radians.
    #[serde(default)]
    pub base_rpy: [f64; 3],
    pub joint: Vec<JointEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointEntry {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    #[serde(default)]
    pub theta_offset: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Shipped default arm description.
pub const DEFAULT_ARM_TOML: &str = include_str!("../configs/arm_default.toml");

impl ArmModel {
    pub fn new(dh_rows: Vec<DhRow>, joint_limits: Vec<(f64, f64)>, base_pose: Pose) -> Result<Self> {
        if dh_rows.len() != DOF || joint_limits.len() != DOF {
            return Err(config_err(format!(
                "arm needs exactly {DOF} DH rows and limits, got {} and {}",
                dh_rows.len(),
                joint_limits.len()
            )));
        }
        if let Some(i) = joint_limits.iter().position(|(lo, hi)| !(lo < hi)) {
            return Err(config_err(format!("joint {i} has lower limit >= upper limit")));
        }
        Ok(Self {
            dh_rows,
            joint_limits,
            base_pose,
        })
    }

    pub fn from_description(file: &ArmFile) -> Result<Self> {
        let [r, p, y] = file.base_rpy;
        let base = Pose::from_parts(
            Translation3::from(Vec3::from(file.base_position)),
            UnitQuaternion::from_euler_angles(r, p, y),
        );
        let rows = file
            .joint
            .iter()
            .map(|j| DhRow {
                a: j.a,
                alpha: j.alpha,
                d: j.d,
                theta_offset: j.theta_offset,
            })
            .collect();
        let limits = file.joint.iter().map(|j| (j.lower, j.upper)).collect();
        Self::new(rows, limits, base)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ArmFile = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        Self::from_description(&file)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: ArmFile = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        Self::from_description(&file)
    }

    /// The shipped 7-DoF arm (1.25 m from shoulder to camera).
    pub fn default_arm() -> Self {
        Self::from_toml_str(DEFAULT_ARM_TOML).expect("shipped arm description is valid")
    }

    /// Longest possible distance from the first joint axis origin to the flange.
    pub fn reach(&self) -> f64 {
        self.dh_rows.iter().skip(1).map(|r| r.a.hypot(r.d)).sum::<f64>() + self.dh_rows[0].a
    }

    /// Base frame followed by the frame after each joint.
    pub fn frames(&self, q: &JointConfig) -> Vec<Pose> {
        let mut frames = Vec::with_capacity(DOF + 1);
        let mut t = self.base_pose;
        frames.push(t);
        for (row, theta) in self.dh_rows.iter().zip(q.0.iter()) {
            t *= row.transform(*theta);
            frames.push(t);
        }
        frames
    }

    pub fn forward_kinematics(&self, q: &JointConfig) -> Pose {
        *self.frames(q).last().expect("non-empty chain")
    }

    /// Geometric Jacobian, rows `(v_x, v_y, v_z, w_x, w_y, w_z)`.
    pub fn jacobian(&self, q: &JointConfig) -> Jacobian {
        let frames = self.frames(q);
        let p_ee = frames[DOF].translation.vector;
        let mut jac = Jacobian::zeros();
        for (i, frame) in frames.iter().take(DOF).enumerate() {
            let z = frame.rotation * Vec3::z();
            let p = frame.translation.vector;
            let lin = z.cross(&(p_ee - p));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
        }
        jac
    }

    pub fn manipulability(&self, q: &JointConfig) -> f64 {
        let j = self.jacobian(q);
        manipulability_of(&DMatrix::from_column_slice(6, DOF, j.as_slice()))
    }

    /// Indices of joints outside their limits.
    pub fn limit_violations(&self, q: &JointConfig) -> Vec<usize> {
        q.0.iter()
            .zip(&self.joint_limits)
            .enumerate()
            .filter(|(_, (v, (lo, hi)))| **v < *lo || **v > *hi)
            .map(|(i, _)| i)
            .collect()
    }
}

/// `sqrt(det(J J^T))`, with round-off negatives clamped to zero.
pub fn manipulability_of(j: &DMatrix<f64>) -> f64 {
    let jjt = j * j.transpose();
    jjt.determinant().max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkConfig {
    pub damping: f64,
    pub max_iterations: usize,
    pub position_tolerance: f64,
    pub orientation_tolerance: f64,
    /// Largest joint update per iteration, radians (inf-norm).
    pub max_joint_step: f64,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            damping: 0.01,
            max_iterations: 200,
            position_tolerance: 1e-5,
            orientation_tolerance: 1e-4,
            max_joint_step: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkSolution {
    pub q: JointConfig,
    pub iterations: usize,
    pub position_error: f64,
    pub orientation_error: f64,
}

fn pose_error(current: &Pose, target: &Pose) -> Vector6<f64> {
    let dp = target.translation.vector - current.translation.vector;
    let dr = (target.rotation * current.rotation.inverse()).scaled_axis();
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

impl ArmModel {
    /// Damped least-squares IK from `seed`.
    pub fn inverse_kinematics(&self, target: &Pose, seed: &JointConfig) -> Result<IkSolution> {
        self.inverse_kinematics_with(target, seed, &IkConfig::default())
    }

    pub fn inverse_kinematics_with(
        &self,
        target: &Pose,
        seed: &JointConfig,
        cfg: &IkConfig,
    ) -> Result<IkSolution> {
        let mut q = *seed;
        let lambda2 = cfg.damping * cfg.damping;
        let mut err = pose_error(&self.forward_kinematics(&q), target);
        for iteration in 0..=cfg.max_iterations {
            let (ep, eo) = (err.fixed_rows::<3>(0).norm(), err.fixed_rows::<3>(3).norm());
            if ep < cfg.position_tolerance && eo < cfg.orientation_tolerance {
                return Ok(IkSolution {
                    q,
                    iterations: iteration,
                    position_error: ep,
                    orientation_error: eo,
                });
            }
            if iteration == cfg.max_iterations {
                return Err(Error::IkFailed {
                    iterations: iteration,
                    position_residual: ep,
                    orientation_residual: eo,
                });
            }
            let j = self.jacobian(&q);
            let damped: Matrix6<f64> = j * j.transpose() + Matrix6::identity() * lambda2;
            let y = damped
                .cholesky()
                .map(|c| c.solve(&err))
                .ok_or(Error::IkFailed {
                    iterations: iteration,
                    position_residual: ep,
                    orientation_residual: eo,
                })?;
            let mut dq = j.transpose() * y;
            let largest = dq.amax();
            if largest > cfg.max_joint_step {
                dq *= cfg.max_joint_step / largest;
            }
            q.0 += dq;
            err = pose_error(&self.forward_kinematics(&q), target);
        }
        unreachable!("loop returns on its last iteration")
    }

    /// Manipulability at the IK solution that places the end effector at
    /// `point` with `orientation`.
    pub fn manipulability_at_point(
        &self,
        point: &Vec3,
        orientation: &UnitQuaternion<f64>,
        seed: &JointConfig,
    ) -> Result<(f64, JointConfig)> {
        let pose = Pose::from_parts(Translation3::from(*point), *orientation);
        let sol = self.inverse_kinematics(&pose, seed)?;
        Ok((self.manipulability(&sol.q), sol.q))
    }

    /// Orthonormal basis of the Jacobian null space (self-motion directions).
    pub fn null_space(&self, q: &JointConfig) -> Vec<SVector<f64, DOF>> {
        // pad to square so the thin SVD still returns every right singular vector
        let jac = self.jacobian(q);
        let j = DMatrix::from_fn(DOF, DOF, |r, c| if r < 6 { jac[(r, c)] } else { 0.0 });
        let svd = j.svd(false, true);
        let vt = svd.v_t.expect("v_t requested");
        let max = svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|s| **s > 1e-9 * max).count();
        (rank..vt.nrows())
            .map(|r| SVector::from_iterator(vt.row(r).iter().cloned()))
            .collect()
    }

    /// Redistribute the redundant degree of freedom to raise manipulability
    /// while holding the end-effector pose, by projected ascent along the
    /// self-motion manifold. Returns the improved configuration.
    pub fn maximize_manipulability(&self, q0: &JointConfig, iterations: usize) -> Result<JointConfig> {
        let target = self.forward_kinematics(q0);
        let mut q = *q0;
        let mut m = self.manipulability(&q);
        let mut step = 0.05;
        for _ in 0..iterations {
            let grad = self.manipulability_gradient(&q);
            let mut dir = SVector::<f64, DOF>::zeros();
            for n in self.null_space(&q) {
                dir += n * n.dot(&grad);
            }
            if dir.norm() < 1e-12 || step < 1e-6 {
                break;
            }
            let trial = JointConfig(q.0 + dir.normalize() * step);
            match self.inverse_kinematics(&target, &trial) {
                Ok(sol) if self.manipulability(&sol.q) > m => {
                    q = sol.q;
                    m = self.manipulability(&q);
                    step *= 1.5;
                }
                _ => step *= 0.5,
            }
        }
        Ok(q)
    }

    fn manipulability_gradient(&self, q: &JointConfig) -> SVector<f64, DOF> {
        let h = 1e-6;
        SVector::from_fn(|i, _| {
            let (mut a, mut b) = (*q, *q);
            a.0[i] += h;
            b.0[i] -= h;
            (self.manipulability(&a) - self.manipulability(&b)) / (2.0 * h)
        })
    }
}

//! Per-step trajectory records and their CSV form.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, Translation3, UnitQuaternion};

use super::{GradientEstimate, Termination};
use crate::error::config_err;
use crate::kinematics::JointConfig;
use crate::{Error, Pose, Result, Vec3};

pub const CSV_HEADER: [&str; 15] = [
    "k", "x", "y", "z", "qw", "qx", "qy", "qz", "p_ref", "f_ref", "grad_x", "grad_y", "grad_z",
    "grad_norm", "m_ref",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ServoStep {
    pub k: usize,
    pub ee_pose: Pose,
    pub q: JointConfig,
    pub p_ref: f64,
    /// Scores of the offset cameras; empty for the single-camera baseline.
    pub p_cameras: Vec<f64>,
    /// Reference first, then one per offset camera. NaN where skipped.
    pub m_values: Vec<f64>,
    pub f_ref: f64,
    pub gradient: Option<GradientEstimate>,
    pub roll_pitch_correction: (f64, f64),
    /// Joints outside their limits at this step.
    pub limit_violations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub steps: Vec<ServoStep>,
    pub termination: Termination,
    pub a_start: f64,
    pub a_end: f64,
    pub f_n: f64,
}

impl TrajectoryLog {
    pub fn from_steps(steps: Vec<ServoStep>, termination: Termination) -> Result<Self> {
        let (first, last) = match (steps.first(), steps.last()) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(config_err("trajectory has no steps")),
        };
        Ok(Self {
            a_start: first.p_ref,
            a_end: last.p_ref,
            f_n: last.f_ref,
            termination,
            steps,
        })
    }

    /// Area change in percentage points of the image.
    pub fn delta_a(&self) -> f64 {
        100.0 * (self.a_end - self.a_start)
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.steps.iter().map(|s| s.ee_pose.translation.vector).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        w.write_record(CSV_HEADER)?;
        for s in &self.steps {
            let t = s.ee_pose.translation.vector;
            let q = s.ee_pose.rotation.quaternion();
            let mut rec = vec![
                s.k.to_string(),
                fmt(t.x),
                fmt(t.y),
                fmt(t.z),
                fmt(q.w),
                fmt(q.i),
                fmt(q.j),
                fmt(q.k),
                fmt(s.p_ref),
                fmt(s.f_ref),
            ];
            match &s.gradient {
                Some(g) => rec.extend([fmt(g.grad.x), fmt(g.grad.y), fmt(g.grad.z), fmt(g.norm())]),
                None => rec.extend(std::iter::repeat_n(String::new(), 4)),
            }
            rec.push(fmt(s.m_values.first().copied().unwrap_or(f64::NAN)));
            w.write_record(&rec)?;
        }
        w.write_record([
            "footer".to_string(),
            self.termination.to_string(),
            fmt(self.a_start),
            fmt(self.a_end),
            fmt(self.f_n),
        ])?;
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(file)
    }
}

/// Shortest round-trip decimal form.
fn fmt(x: f64) -> String {
    format!("{x:?}")
}

/// One row of a trajectory CSV, as read back for plotting and comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedStep {
    pub k: usize,
    pub pose: Pose,
    pub p_ref: f64,
    pub f_ref: f64,
    pub grad: Option<Vec3>,
    pub m_ref: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedTrajectory {
    pub steps: Vec<LoggedStep>,
    pub termination: Termination,
    pub a_start: f64,
    pub a_end: f64,
    pub f_n: f64,
}

impl LoggedTrajectory {
    pub fn read_csv<R: Read>(input: R, origin: &Path) -> Result<Self> {
        let parse_err = |message: String| Error::Parse {
            path: origin.to_owned(),
            message,
        };
        let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(input);
        let mut steps = Vec::new();
        let mut footer = None;
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| parse_err(format!("row {}: missing column {i}", line + 2)))?
                    .parse::<f64>()
                    .map_err(|e| parse_err(format!("row {}: column {i}: {e}", line + 2)))
            };
            if rec.get(0) == Some("footer") {
                let termination = rec.get(1).unwrap_or_default().parse()?;
                footer = Some((termination, num(2)?, num(3)?, num(4)?));
                continue;
            }
            let pose = Pose::from_parts(
                Translation3::new(num(1)?, num(2)?, num(3)?),
                UnitQuaternion::from_quaternion(Quaternion::new(num(4)?, num(5)?, num(6)?, num(7)?)),
            );
            let grad = if rec.get(10).is_some_and(|s| !s.is_empty()) {
                Some(Vec3::new(num(10)?, num(11)?, num(12)?))
            } else {
                None
            };
            steps.push(LoggedStep {
                k: num(0)? as usize,
                pose,
                p_ref: num(8)?,
                f_ref: num(9)?,
                grad,
                m_ref: num(14)?,
            });
        }
        let (termination, a_start, a_end, f_n) =
            footer.ok_or_else(|| parse_err("missing footer row".into()))?;
        if steps.is_empty() {
            return Err(parse_err("no step rows".into()));
        }
        Ok(Self {
            steps,
            termination,
            a_start,
            a_end,
            f_n,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file, path)
    }
}

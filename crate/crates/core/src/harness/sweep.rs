//! Parameter grids and the trial runner.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::config_err;
use crate::scene::{build_scene, SceneModel};
use crate::servo::{look_at_pose, run_3dmts, run_baseline, ServoConfig, ServoSetup, Termination, TrajectoryLog};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Proposed,
    Naive,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Naive => "naive",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Method::Proposed),
            "naive" => Ok(Method::Naive),
            other => Err(config_err(format!("unknown method '{other}'"))),
        }
    }
}

/// Parameters of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellParams {
    pub target_y: f64,
    pub target_z: f64,
    pub occ_y: f64,
    pub occ_z: f64,
    pub theta_deg: f64,
    pub w1: f64,
    pub w2: f64,
    pub radius: f64,
    pub sigma: f64,
}

impl CellParams {
    /// Value of a named parameter, for grouping.
    pub fn get(&self, name: &str) -> Option<String> {
        let v = match name {
            "target_y" => self.target_y,
            "target_z" => self.target_z,
            "occ_y" => self.occ_y,
            "occ_z" => self.occ_z,
            "theta" | "theta_deg" => self.theta_deg,
            "radius" | "r" => self.radius,
            "sigma" => self.sigma,
            "weights" => return Some(format!("{}/{}", self.w1, self.w2)),
            "all" => return Some("all".into()),
            _ => return None,
        };
        Some(format!("{v}"))
    }
}

pub const GROUP_KEYS: [&str; 9] = [
    "target_y", "target_z", "occ_y", "occ_z", "theta", "weights", "radius", "sigma", "all",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TrialDescriptor {
    pub index: usize,
    pub replicate: usize,
    pub seed: u64,
    pub cell: CellParams,
}

impl TrialDescriptor {
    pub fn id(&self) -> String {
        format!("{:04}", self.index)
    }
}

fn or_base<T: Clone>(list: &[T], base: T) -> Vec<T> {
    if list.is_empty() {
        vec![base]
    } else {
        list.to_vec()
    }
}

/// Cartesian product of every list in the sweep section, replications
/// innermost. Each descriptor seed is derived from the base seed and its
/// position in the product.
pub fn expand_sweep(cfg: &ExperimentConfig) -> Result<Vec<TrialDescriptor>> {
    let s = &cfg.sweep;
    let t = &cfg.trial;
    let ty = or_base(&s.target_y, t.target_offset[0]);
    let tz = or_base(&s.target_z, t.target_offset[1]);
    let oy = or_base(&s.occ_y, t.occluder_offset[0]);
    let oz = or_base(&s.occ_z, t.occluder_offset[1]);
    let th = or_base(&s.theta_deg, t.theta_deg);
    let ws = or_base(&s.weights, [cfg.servo.w1, cfg.servo.w2]);
    let rs = or_base(&s.radius, cfg.array.radius);
    let sg = or_base(&s.sigma, cfg.servo.sigma);
    let reps = s.replications.unwrap_or(1);
    if reps == 0 {
        return Err(config_err("sweep.replications must be >= 1"));
    }
    let mut out = Vec::new();
    for &target_y in &ty {
        for &target_z in &tz {
            for &occ_y in &oy {
                for &occ_z in &oz {
                    for &theta_deg in &th {
                        for &[w1, w2] in &ws {
                            for &radius in &rs {
                                for &sigma in &sg {
                                    for replicate in 0..reps {
                                        let index = out.len();
                                        out.push(TrialDescriptor {
                                            index,
                                            replicate,
                                            seed: seed::derive(s.base_seed, index as u64),
                                            cell: CellParams {
                                                target_y,
                                                target_z,
                                                occ_y,
                                                occ_z,
                                                theta_deg,
                                                w1,
                                                w2,
                                                radius,
                                                sigma,
                                            },
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if out.is_empty() {
        return Err(config_err("sweep expands to zero trials"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub index: usize,
    pub replicate: usize,
    pub seed: u64,
    pub cell: CellParams,
    pub method: Method,
    /// `None` when the trial errored before producing a log.
    pub termination: Option<Termination>,
    pub steps: usize,
    pub a_start: f64,
    pub a_end: f64,
    pub f_n: f64,
    pub error: String,
    pub wall_time: f64,
}

impl TrialResult {
    /// Percentage points of image area.
    pub fn delta_a(&self) -> f64 {
        100.0 * (self.a_end - self.a_start)
    }

    /// Percent growth relative to the start area.
    pub fn delta_a_relative(&self) -> f64 {
        if self.a_start > 0.0 {
            100.0 * (self.a_end - self.a_start) / self.a_start
        } else {
            f64::NAN
        }
    }

    /// Counted in means: produced a log and did not end in IK failure.
    pub fn completed(&self) -> bool {
        matches!(self.termination, Some(t) if t != Termination::IkFailed)
    }
}

/// Shared, per-sweep state: the arm solved once for the start pose.
pub struct TrialContext {
    pub config: ExperimentConfig,
    pub setup: ServoSetup,
}

impl TrialContext {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let start = look_at_pose(&config.scene.viewpoint(), &config.scene.anchor())?;
        let setup = ServoSetup::new(config.arm()?, start)?;
        Ok(Self { config, setup })
    }

    pub fn scene_for(&self, cell: &CellParams) -> Result<SceneModel> {
        build_scene(
            (cell.target_y, cell.target_z),
            (cell.occ_y, cell.occ_z),
            cell.theta_deg,
            &self.config.scene,
        )
    }

    pub fn servo_for(&self, d: &TrialDescriptor) -> ServoConfig {
        ServoConfig {
            w1: d.cell.w1,
            w2: d.cell.w2,
            sigma: d.cell.sigma,
            rng_seed: d.seed,
            ..self.config.servo.clone()
        }
    }

    pub fn run(&self, d: &TrialDescriptor, method: Method) -> Result<TrajectoryLog> {
        let scene = self.scene_for(&d.cell)?;
        let servo = self.servo_for(d);
        let intr = self.config.camera.intrinsics()?;
        let seg = &self.config.segmentation;
        match method {
            Method::Proposed => {
                let array = self.config.array.build(d.cell.radius, intr)?;
                run_3dmts(&scene, &self.setup, &array, seg, &servo)
            }
            Method::Naive => run_baseline(&scene, &self.setup, &intr, seg, &servo),
        }
    }

    /// Run one method on one descriptor, never failing.
    pub fn run_recorded(&self, d: &TrialDescriptor, method: Method) -> (TrialResult, Option<TrajectoryLog>) {
        let started = Instant::now();
        let outcome = self.run(d, method);
        let wall_time = started.elapsed().as_secs_f64();
        let mut r = TrialResult {
            index: d.index,
            replicate: d.replicate,
            seed: d.seed,
            cell: d.cell,
            method,
            termination: None,
            steps: 0,
            a_start: f64::NAN,
            a_end: f64::NAN,
            f_n: f64::NAN,
            error: String::new(),
            wall_time,
        };
        match outcome {
            Ok(log) => {
                r.termination = Some(log.termination);
                r.steps = log.steps.len();
                r.a_start = log.a_start;
                r.a_end = log.a_end;
                r.f_n = log.f_n;
                (r, Some(log))
            }
            Err(e) => {
                if matches!(e, Error::IkFailed { .. }) {
                    r.termination = Some(Termination::IkFailed);
                }
                r.error = e.to_string();
                (r, None)
            }
        }
    }
}

/// Run both methods on every descriptor with `jobs` worker threads. When
/// `out_dir` is given each trajectory is written as `trial_<id>_<method>.csv`.
pub fn run_sweep(
    ctx: &TrialContext,
    descriptors: &[TrialDescriptor],
    jobs: usize,
    out_dir: Option<&Path>,
) -> Result<Vec<TrialResult>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| config_err(e.to_string()))?;
    let jobs: Vec<(&TrialDescriptor, Method)> = descriptors
        .iter()
        .flat_map(|d| [(d, Method::Proposed), (d, Method::Naive)])
        .collect();
    pool.install(|| {
        jobs.par_iter()
            .map(|(d, m)| {
                let (result, log) = ctx.run_recorded(d, *m);
                if let (Some(dir), Some(log)) = (out_dir, log) {
                    log.save_csv(&dir.join(format!("trial_{}_{}.csv", d.id(), m)))?;
                }
                log::info!("trial {} {}: {:?}", d.id(), m, result.termination);
                Ok(result)
            })
            .collect()
    })
}

const SUMMARY_HEADER: [&str; 22] = [
    "id", "replicate", "seed", "target_y", "target_z", "occ_y", "occ_z", "theta", "w1", "w2",
    "radius", "sigma", "method", "termination", "steps", "a_start", "a_end", "delta_a_points",
    "delta_a_relative", "f_n", "error", "wall_time",
];

pub fn write_summary<W: Write>(results: &[TrialResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    let f = |x: f64| format!("{x:?}");
    for r in results {
        let c = &r.cell;
        w.write_record([
            format!("{:04}", r.index),
            r.replicate.to_string(),
            r.seed.to_string(),
            f(c.target_y),
            f(c.target_z),
            f(c.occ_y),
            f(c.occ_z),
            f(c.theta_deg),
            f(c.w1),
            f(c.w2),
            f(c.radius),
            f(c.sigma),
            r.method.to_string(),
            r.termination.map(|t| t.to_string()).unwrap_or_default(),
            r.steps.to_string(),
            f(r.a_start),
            f(r.a_end),
            f(r.delta_a()),
            f(r.delta_a_relative()),
            f(r.f_n),
            r.error.clone(),
            format!("{:.6}", r.wall_time),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary<R: Read>(input: R, origin: &Path) -> Result<Vec<TrialResult>> {
    let mut rd = csv::Reader::from_reader(input);
    let perr = |line: usize, message: String| Error::Parse {
        path: origin.to_owned(),
        message: format!("row {line}: {message}"),
    };
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let s = |k: usize| rec.get(k).ok_or_else(|| perr(line, format!("missing column {k}")));
        let num = |k: usize| -> Result<f64> { s(k)?.parse::<f64>().map_err(|e| perr(line, e.to_string())) };
        let int = |k: usize| -> Result<u64> { s(k)?.parse::<u64>().map_err(|e| perr(line, e.to_string())) };
        let term = s(13)?;
        out.push(TrialResult {
            index: int(0)? as usize,
            replicate: int(1)? as usize,
            seed: int(2)?,
            cell: CellParams {
                target_y: num(3)?,
                target_z: num(4)?,
                occ_y: num(5)?,
                occ_z: num(6)?,
                theta_deg: num(7)?,
                w1: num(8)?,
                w2: num(9)?,
                radius: num(10)?,
                sigma: num(11)?,
            },
            method: s(12)?.parse()?,
            termination: if term.is_empty() { None } else { Some(term.parse()?) },
            steps: int(14)? as usize,
            a_start: num(15)?,
            a_end: num(16)?,
            f_n: num(19)?,
            error: s(20)?.to_string(),
            wall_time: num(21)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(text, Path::new(".")).unwrap()
    }

    #[test]
    fn position_and_angle_grid_has_243_cells() {
        let c = cfg("[sweep]\ntarget_y=[-0.1,0,0.1]\ntarget_z=[-0.1,0,0.1]\nocc_y=[-0.1,0,0.1]\nocc_z=[-0.1,0,0.1]\ntheta_deg=[-45,0,45]\n");
        let d = expand_sweep(&c).unwrap();
        assert_eq!(d.len(), 243);
        let mut seeds: Vec<u64> = d.iter().map(|x| x.seed).collect();
        seeds.sort();
        seeds.dedup();
        assert_eq!(seeds.len(), 243);
        assert!(d.iter().enumerate().all(|(i, x)| x.index == i));
    }

    #[test]
    fn single_cell_and_replication() {
        let d = expand_sweep(&cfg("")).unwrap();
        assert_eq!(d.len(), 1);
        let d2 = expand_sweep(&cfg("[sweep]\nreplications = 2\n")).unwrap();
        assert_eq!(d2.len(), 2);
        assert_ne!(d2[0].seed, d2[1].seed);
        assert_eq!(d2[0].cell, d2[1].cell);
    }

    #[test]
    fn base_values_fill_empty_lists() {
        let c = cfg("[trial]\ntarget_offset=[0.1,-0.1]\ntheta_deg=45\n[servo]\nsigma=0.01\n[array]\nradius=0.09\n");
        let d = expand_sweep(&c).unwrap();
        assert_eq!(d[0].cell.target_y, 0.1);
        assert_eq!(d[0].cell.target_z, -0.1);
        assert_eq!(d[0].cell.theta_deg, 45.0);
        assert_eq!(d[0].cell.sigma, 0.01);
        assert_eq!(d[0].cell.radius, 0.09);
    }

    #[test]
    fn method_parsing() {
        assert_eq!("naive".parse::<Method>().unwrap(), Method::Naive);
        assert!("other".parse::<Method>().is_err());
    }

    #[test]
    fn summary_round_trip() {
        let c = cfg("[sweep]\ntheta_deg=[0,45]\n");
        let d = expand_sweep(&c).unwrap();
        let r = TrialResult {
            index: d[1].index,
            replicate: 0,
            seed: d[1].seed,
            cell: d[1].cell,
            method: Method::Naive,
            termination: Some(Termination::ScoreReached),
            steps: 12,
            a_start: 0.02,
            a_end: 0.41,
            f_n: 0.41,
            error: String::new(),
            wall_time: 0.5,
        };
        let failed = TrialResult { termination: None, error: "boom, with comma".into(), ..r.clone() };
        let mut buf = Vec::new();
        write_summary(&[r.clone(), failed.clone()], &mut buf).unwrap();
        let back = read_summary(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, vec![r, failed]);
    }

    #[test]
    fn parallelism_does_not_change_results() {
        let c = cfg("[servo]\nmax_steps=8\n[sweep]\nocc_y=[0.0,0.1]\ntheta_deg=[0,45]\n");
        let ctx = TrialContext::new(c).unwrap();
        let d = expand_sweep(&ctx.config).unwrap();
        let strip = |mut v: Vec<TrialResult>| {
            v.iter_mut().for_each(|r| r.wall_time = 0.0);
            v
        };
        let a = strip(run_sweep(&ctx, &d, 1, None).unwrap());
        let b = strip(run_sweep(&ctx, &d, 4, None).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
    }

    #[test]
    fn unreachable_cell_records_ik_failure() {
        // target far beyond the arm: the approach runs out of reach
        let c = cfg("[scene]\nanchor=[2.5,0.6,0.4]\nviewpoint=[0.0,0.6,0.4]\nworkspace_half_size=3.0\ntarget_radius=0.15\nwith_occluder=false\n[servo]\nalpha=0.05\nmax_translation=0.05\nepsilon=0.0\n");
        let ctx = TrialContext::new(c).unwrap();
        let d = expand_sweep(&ctx.config).unwrap();
        let (r, _) = ctx.run_recorded(&d[0], Method::Naive);
        assert_eq!(r.termination, Some(Termination::IkFailed), "{r:?}");
        assert!(!r.completed());
    }
}

//! Experiment configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::config_err;
use crate::kinematics::ArmModel;
use crate::render::{CameraArray, CameraIntrinsics};
use crate::scene::SceneConfig;
use crate::segment::SegmentationModel;
use crate::servo::ServoConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            hfov_deg: 60.0,
        }
    }
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.width, self.height, self.hfov_deg.to_radians())
    }
}

/// Either a radius for the scaled rig layout or explicit grid offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub radius: f64,
    /// `[dx, dy, dz]`; overrides `radius` when present.
    pub offsets: Option<[f64; 3]>,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            radius: 0.06,
            offsets: None,
        }
    }
}

impl ArrayConfig {
    pub fn build(&self, radius: f64, intrinsics: CameraIntrinsics) -> Result<CameraArray> {
        match self.offsets {
            Some([dx, dy, dz]) => CameraArray::grid_layout(dx, dy, dz, intrinsics),
            None => CameraArray::with_radius(radius, intrinsics),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmConfig {
    /// Arm description, relative to the config file; the shipped arm when absent.
    pub file: Option<PathBuf>,
}

/// The single trial run by `run-trial`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    pub target_offset: [f64; 2],
    pub occluder_offset: [f64; 2],
    pub theta_deg: f64,
}

/// Parameter lists; an empty list means "use the base value".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub target_y: Vec<f64>,
    pub target_z: Vec<f64>,
    pub occ_y: Vec<f64>,
    pub occ_z: Vec<f64>,
    pub theta_deg: Vec<f64>,
    pub weights: Vec<[f64; 2]>,
    pub radius: Vec<f64>,
    pub sigma: Vec<f64>,
    pub replications: Option<usize>,
    pub base_seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    pub camera: CameraConfig,
    pub array: ArrayConfig,
    pub segmentation: SegmentationModel,
    pub servo: ServoConfig,
    pub arm: ArmConfig,
    pub trial: TrialConfig,
    pub sweep: SweepConfig,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.base_dir = base_dir.to_owned();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        cfg.base_dir = path.parent().map(Path::to_owned).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.intrinsics()?;
        self.servo.validate()?;
        let s = &self.segmentation;
        SegmentationModel::new(s.mean, s.covariance, s.threshold)?;
        if self.sweep.replications == Some(0) {
            return Err(config_err("sweep.replications must be >= 1"));
        }
        Ok(())
    }

    pub fn arm(&self) -> Result<ArmModel> {
        match &self.arm.file {
            Some(f) => ArmModel::from_file(&self.base_dir.join(f)),
            None => Ok(ArmModel::default_arm()),
        }
    }
}

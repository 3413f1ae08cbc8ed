//! Pinhole ray casting, the end-effector camera array, and pixel noise.
//!
//! Camera frames follow the usual vision convention: `+z` is the optical
//! axis, `+x` points right along image `u`, `+y` points down along image `v`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, Translation3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::config_err;
use crate::scene::{ray_hit, SceneModel};
use crate::{seed, Pose, Result, Rgb, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view, radians.
    pub hfov: f64,
    /// Principal point in continuous pixel coordinates (pixel `i` spans `[i, i+1)`).
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(width: usize, height: usize, hfov: f64) -> Result<Self> {
        let intr = Self {
            width,
            height,
            hfov,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(config_err(format!(
                "image {}x{} below the 16x16 minimum",
                self.width, self.height
            )));
        }
        if !(self.hfov > 0.0 && self.hfov < std::f64::consts::PI) {
            return Err(config_err(format!("field of view {} rad outside (0, pi)", self.hfov)));
        }
        Ok(())
    }

    /// Focal length in pixels (square pixels).
    pub fn focal(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.hfov / 2.0).tan()
    }

    pub fn vfov(&self) -> f64 {
        2.0 * ((self.height as f64 / 2.0) / self.focal()).atan()
    }

    /// Unit ray direction in the camera frame through continuous pixel
    /// coordinates `(u, v)`.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vec3 {
        let f = self.focal();
        Vec3::new((u - self.cx) / f, (v - self.cy) / f, 1.0).normalize()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB.
    pub pixels: Vec<Rgb>,
}

impl Image {
    pub fn get(&self, u: usize, v: usize) -> Rgb {
        self.pixels[v * self.width + u]
    }

    /// Binary PPM (P6), 8 bits per channel.
    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(self.pixels.len() * 3 + 32);
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        for px in &self.pixels {
            for c in px {
                out.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Flat-shaded render: every pixel takes the color of the surface its center
/// ray hits first.
pub fn render(camera_pose: &Pose, intrinsics: &CameraIntrinsics, scene: &SceneModel) -> Image {
    let origin = camera_pose.translation.vector;
    let rot = camera_pose.rotation;
    let mut pixels = Vec::with_capacity(intrinsics.width * intrinsics.height);
    for v in 0..intrinsics.height {
        for u in 0..intrinsics.width {
            let dir = rot * intrinsics.ray_direction(u as f64 + 0.5, v as f64 + 0.5);
            pixels.push(ray_hit(&origin, &dir, scene).color);
        }
    }
    Image {
        width: intrinsics.width,
        height: intrinsics.height,
        pixels,
    }
}

/// Add i.i.d. zero-mean Gaussian noise per channel, then clamp to `[0, 1]`.
pub fn add_pixel_noise(image: &Image, sigma: f64, rng_seed: u64) -> Result<Image> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(config_err(format!("pixel noise sigma {sigma} must be non-negative")));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| config_err(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let pixels = image
        .pixels
        .iter()
        .map(|px| px.map(|c| (c + normal.sample(&mut rng)).clamp(0.0, 1.0)))
        .collect();
    Ok(Image {
        width: image.width,
        height: image.height,
        pixels,
    })
}

/// Reference camera at the end-effector origin plus `n` offset cameras, all
/// with optical axes parallel to the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraArray {
    offsets: Vec<Vec3>,
    pub intrinsics: CameraIntrinsics,
}

/// Offsets of the physical nine-camera rig, meters.
pub const RIG_OFFSETS: [f64; 3] = [0.027, 0.027, 0.03];

impl CameraArray {
    pub fn new(offsets: Vec<Vec3>, intrinsics: CameraIntrinsics) -> Result<Self> {
        intrinsics.validate()?;
        if offsets.len() < 3 {
            return Err(config_err(format!(
                "camera array needs at least 3 offset cameras, got {}",
                offsets.len()
            )));
        }
        if offsets.iter().any(|v| !(v.norm() > 0.0) || !v.iter().all(|c| c.is_finite())) {
            return Err(config_err("camera offsets must be finite and non-zero"));
        }
        let rank = offset_rank(&offsets);
        if rank < 3 {
            return Err(config_err(format!(
                "camera offsets span only {rank} dimensions; the gradient would be unobservable"
            )));
        }
        Ok(Self { offsets, intrinsics })
    }

    /// 3x3 grid around the reference: corners `(±dx, ±dy, dz)` and edge
    /// midpoints `(±dx, 0, dz)`, `(0, ±dy, dz)`, in raster order.
    pub fn grid_layout(dx: f64, dy: f64, dz: f64, intrinsics: CameraIntrinsics) -> Result<Self> {
        if !(dx > 0.0 && dy > 0.0 && dz > 0.0) {
            return Err(config_err(format!(
                "array offsets ({dx}, {dy}, {dz}) must all be positive"
            )));
        }
        let mut offsets = Vec::with_capacity(8);
        for sy in [-1.0, 0.0, 1.0] {
            for sx in [-1.0, 0.0, 1.0] {
                if sx == 0.0 && sy == 0.0 {
                    continue;
                }
                offsets.push(Vec3::new(sx * dx, sy * dy, dz));
            }
        }
        Self::new(offsets, intrinsics)
    }

    /// Grid layout with the rig's proportions scaled so that the corner
    /// cameras sit at distance `radius` from the reference.
    pub fn with_radius(radius: f64, intrinsics: CameraIntrinsics) -> Result<Self> {
        let rig = Vec3::from(RIG_OFFSETS);
        let s = radius / rig.norm();
        Self::grid_layout(rig.x * s, rig.y * s, rig.z * s, intrinsics)
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn offsets(&self) -> &[Vec3] {
        &self.offsets
    }

    /// Distance from the reference to each offset camera.
    pub fn baselines(&self) -> Vec<f64> {
        self.offsets.iter().map(|v| v.norm()).collect()
    }

    /// Nominal array radius: the largest baseline.
    pub fn radius(&self) -> f64 {
        self.baselines().into_iter().fold(0.0, f64::max)
    }

    /// World poses of the offset cameras for a given end-effector pose.
    pub fn camera_poses(&self, ee_pose: &Pose) -> Vec<Pose> {
        self.offsets
            .iter()
            .map(|v| ee_pose * Translation3::from(*v))
            .collect()
    }
}

fn offset_rank(offsets: &[Vec3]) -> usize {
    let m = DMatrix::from_fn(offsets.len(), 3, |i, j| offsets[i][j]);
    let sv = m.svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|s| **s > 1e-9 * max.max(1e-300)).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayViews {
    pub reference: Image,
    pub offset: Vec<Image>,
}

/// Seed of the noise stream for camera `index` (0 = reference).
pub fn camera_seed(step_seed: u64, index: usize) -> u64 {
    seed::derive(step_seed, index as u64)
}

/// Render the reference view and every offset view, each with its own noise
/// stream split from `step_seed`.
pub fn array_views(
    ee_pose: &Pose,
    array: &CameraArray,
    scene: &SceneModel,
    sigma: f64,
    step_seed: u64,
) -> Result<ArrayViews> {
    use rayon::prelude::*;

    let mut poses = vec![*ee_pose];
    poses.extend(array.camera_poses(ee_pose));
    let images = poses
        .par_iter()
        .enumerate()
        .map(|(i, pose)| {
            let clean = render(pose, &array.intrinsics, scene);
            add_pixel_noise(&clean, sigma, camera_seed(step_seed, i))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut images = images.into_iter();
    let reference = images.next().expect("reference view");
    Ok(ArrayViews {
        reference,
        offset: images.collect(),
    })
}

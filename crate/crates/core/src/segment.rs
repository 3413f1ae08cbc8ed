//! Color segmentation with a diagonal Gaussian in rotated-HSV space.
//!
//! Hue is rotated by 90 degrees before normalization so that red, which
//! straddles 0/360 in plain HSV, maps to a contiguous band around 0.25.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::config_err;
use crate::render::Image;
use crate::{Result, Rgb};

/// Rotated hue assigned to achromatic colors, where hue is undefined.
pub const ACHROMATIC_HUE: f64 = 0.25;

/// RGB in `[0,1]` to `(h', s, v)`, each in `[0,1]` (`h'` in `[0,1)`).
pub fn rgb_to_rotated_hsv(rgb: Rgb) -> [f64; 3] {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return [ACHROMATIC_HUE, s, v];
    }
    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let hue_deg = 60.0 * sector;
    let rotated = (hue_deg + 90.0).rem_euclid(360.0) / 360.0;
    // rem_euclid can round up to exactly 1.0 for tiny negative inputs
    [if rotated >= 1.0 { 0.0 } else { rotated }, s, v]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationModel {
    pub mean: [f64; 3],
    /// Diagonal of the covariance matrix.
    pub covariance: [f64; 3],
    /// Density threshold; a pixel is target iff its density is at least this.
    pub threshold: f64,
}

impl Default for SegmentationModel {
    fn default() -> Self {
        Self::with_acceptance_radius([0.25, 0.9, 0.9], [0.004, 0.04, 0.04], 3.0)
            .expect("default model is valid")
    }
}

impl SegmentationModel {
    pub fn new(mean: [f64; 3], covariance: [f64; 3], threshold: f64) -> Result<Self> {
        if covariance.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(config_err("covariance diagonal entries must be positive"));
        }
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(config_err("segmentation threshold must be positive"));
        }
        Ok(Self {
            mean,
            covariance,
            threshold,
        })
    }

    /// Threshold placed at the given Mahalanobis distance from the mean.
    pub fn with_acceptance_radius(mean: [f64; 3], covariance: [f64; 3], radius: f64) -> Result<Self> {
        let mut model = Self::new(mean, covariance, 1.0)?;
        model.threshold = model.peak_density() * (-0.5 * radius * radius).exp();
        Self::new(mean, covariance, model.threshold)
    }

    pub fn determinant(&self) -> f64 {
        self.covariance.iter().product()
    }

    pub fn peak_density(&self) -> f64 {
        (2.0 * PI).powf(-1.5) / self.determinant().sqrt()
    }

    pub fn mahalanobis_sq(&self, x: &[f64; 3]) -> f64 {
        (0..3)
            .map(|i| {
                let d = x[i] - self.mean[i];
                d * d / self.covariance[i]
            })
            .sum()
    }

    pub fn accepts(&self, x: &[f64; 3]) -> bool {
        gaussian_density(x, self) >= self.threshold
    }

    /// Mahalanobis radius at which the density equals the threshold, or
    /// `None` when the threshold exceeds the peak.
    pub fn acceptance_radius(&self) -> Option<f64> {
        let cut = -2.0 * (self.threshold / self.peak_density()).ln();
        (cut >= 0.0).then(|| cut.sqrt())
    }
}

/// Multivariate normal density with diagonal covariance, `D = 3`.
pub fn gaussian_density(x: &[f64; 3], model: &SegmentationModel) -> f64 {
    model.peak_density() * (-0.5 * model.mahalanobis_sq(x)).exp()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    /// Row-major, `true` marks target pixels.
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[v * self.width + u]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

pub fn segment(image: &Image, model: &SegmentationModel) -> Mask {
    Mask {
        width: image.width,
        height: image.height,
        bits: image
            .pixels
            .iter()
            .map(|px| model.accepts(&rgb_to_rotated_hsv(*px)))
            .collect(),
    }
}

/// Fraction of the image classified as target.
pub fn target_score(mask: &Mask) -> f64 {
    mask.count() as f64 / (mask.width * mask.height) as f64
}

/// Mean `(u, v)` pixel index of target pixels (u = column, v = row).
pub fn centroid(mask: &Mask) -> Option<(f64, f64)> {
    let (mut su, mut sv, mut n) = (0.0, 0.0, 0usize);
    for (i, _) in mask.bits.iter().enumerate().filter(|(_, b)| **b) {
        su += (i % mask.width) as f64;
        sv += (i / mask.width) as f64;
        n += 1;
    }
    (n > 0).then(|| (su / n as f64, sv / n as f64))
}

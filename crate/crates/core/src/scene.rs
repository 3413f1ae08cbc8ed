//! The simulated world: one spherical target, planar occluders, a uniform
//! background, and the ray queries the renderer is built on.

use nalgebra::{Rotation3, Unit};
use serde::{Deserialize, Serialize};

use crate::error::config_err;
use crate::segment::SegmentationModel;
use crate::{Result, Rgb, Vec3};

const HIT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TargetObject {
    pub center: Vec3,
    pub radius: f64,
    pub color: Rgb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OccluderShape {
    Disk,
    Square,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Occluder {
    pub center: Vec3,
    pub normal: Unit<Vec3>,
    /// Disk radius, or half the side length of a square.
    pub half_extent: f64,
    pub shape: OccluderShape,
    pub color: Rgb,
    /// Placement angle about the viewing axis, degrees.
    pub occlusion_angle: f64,
    /// In-plane edge direction of a square, orthogonal to `normal`.
    pub edge_axis: Unit<Vec3>,
}

impl Occluder {
    fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-15 {
            return None;
        }
        let t = self.normal.dot(&(self.center - origin)) / denom;
        if t <= HIT_EPS {
            return None;
        }
        let local = origin + dir * t - self.center;
        let inside = match self.shape {
            OccluderShape::Disk => local.norm_squared() <= self.half_extent * self.half_extent,
            OccluderShape::Square => {
                let other = self.normal.cross(&self.edge_axis);
                local.dot(&self.edge_axis).abs() <= self.half_extent
                    && local.dot(&other).abs() <= self.half_extent
            }
        };
        inside.then_some(t)
    }
}

impl TargetObject {
    fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let oc = origin - self.center;
        let b = oc.dot(dir);
        let c = oc.norm_squared() - self.radius * self.radius;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        let near = -b - sq;
        if near > HIT_EPS {
            return Some(near);
        }
        let far = -b + sq;
        (far > HIT_EPS).then_some(far)
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn centered(center: Vec3, half_size: f64) -> Self {
        let h = Vec3::repeat(half_size);
        Self {
            min: center - h,
            max: center + h,
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub target: TargetObject,
    pub occluders: Vec<Occluder>,
    pub background_color: Rgb,
    pub workspace: Aabb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HitKind {
    Target,
    Occluder,
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub kind: HitKind,
    /// Distance along the ray; `f64::INFINITY` for background.
    pub distance: f64,
    pub color: Rgb,
}

/// Nearest intersection along a ray with a unit direction.
pub fn ray_hit(origin: &Vec3, direction: &Vec3, scene: &SceneModel) -> Hit {
    let mut best = Hit {
        kind: HitKind::Background,
        distance: f64::INFINITY,
        color: scene.background_color,
    };
    if let Some(t) = scene.target.intersect(origin, direction) {
        best = Hit {
            kind: HitKind::Target,
            distance: t,
            color: scene.target.color,
        };
    }
    for occ in &scene.occluders {
        if let Some(t) = occ.intersect(origin, direction) {
            if t < best.distance {
                best = Hit {
                    kind: HitKind::Occluder,
                    distance: t,
                    color: occ.color,
                };
            }
        }
    }
    best
}

/// Parameters shared by every scene of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Nominal target center before offsets, world frame.
    pub anchor: [f64; 3],
    /// Nominal start camera position; defines the viewing axis.
    pub viewpoint: [f64; 3],
    pub target_radius: f64,
    pub target_color: Rgb,
    /// Distance of the occluder plane in front of the target.
    pub occluder_standoff: f64,
    pub occluder_half_extent: f64,
    pub occluder_shape: OccluderShape,
    pub occluder_color: Rgb,
    pub background_color: Rgb,
    /// Half side of the workspace cube centered on the anchor.
    pub workspace_half_size: f64,
    /// Scenes are built without an occluder when false.
    pub with_occluder: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            anchor: [0.5, 0.6, 0.4],
            viewpoint: [0.0, 0.6, 0.4],
            target_radius: 0.05,
            target_color: [0.85, 0.08, 0.06],
            occluder_standoff: 0.15,
            occluder_half_extent: 0.1,
            occluder_shape: OccluderShape::Disk,
            occluder_color: [0.18, 0.55, 0.16],
            background_color: [0.42, 0.40, 0.36],
            workspace_half_size: 0.5,
            with_occluder: true,
        }
    }
}

impl SceneConfig {
    pub fn anchor(&self) -> Vec3 {
        Vec3::from(self.anchor)
    }

    pub fn viewpoint(&self) -> Vec3 {
        Vec3::from(self.viewpoint)
    }
}

/// Unit viewing axis pointing from the target toward the viewpoint, and the
/// in-plane reference direction for zero occlusion angle (world +y projected
/// off the axis) with its right-handed partner.
fn placement_frame(target: &Vec3, viewpoint: &Vec3) -> Result<(Unit<Vec3>, Vec3, Vec3)> {
    let toward_camera = Unit::try_new(viewpoint - target, 1e-9)
        .ok_or_else(|| config_err("viewpoint coincides with the target center"))?;
    let mut reference = Vec3::y() - toward_camera.into_inner() * toward_camera.dot(&Vec3::y());
    if reference.norm() < 1e-6 {
        reference = Vec3::z() - toward_camera.into_inner() * toward_camera.dot(&Vec3::z());
    }
    let e1 = reference.normalize();
    let e2 = toward_camera.cross(&e1);
    Ok((toward_camera, e1, e2))
}

/// Build one experiment scene.
///
/// The target is displaced from the anchor by `target_offset_yz`. The
/// occluder sits `occluder_standoff` in front of the target on the line to
/// the viewpoint, is displaced in the plane orthogonal to that line by
/// `occluder_offset_yz` (components along the +y reference direction and its
/// partner, which coincide with world y/z for an axis along x), and the
/// displacement is then rotated by `occlusion_angle` degrees about the line.
pub fn build_scene(
    target_offset_yz: (f64, f64),
    occluder_offset_yz: (f64, f64),
    occlusion_angle: f64,
    base: &SceneConfig,
) -> Result<SceneModel> {
    if !occlusion_angle.is_finite() || occlusion_angle.abs() > 180.0 {
        return Err(config_err(format!(
            "occlusion angle {occlusion_angle} outside [-180, 180]"
        )));
    }
    if !(base.target_radius > 0.0) || !(base.occluder_half_extent > 0.0) {
        return Err(config_err("target radius and occluder half-extent must be positive"));
    }
    for c in [base.target_color, base.occluder_color, base.background_color] {
        if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(config_err(format!("color {c:?} outside [0, 1]")));
        }
    }
    let workspace = Aabb::centered(base.anchor(), base.workspace_half_size);
    let center = base.anchor() + Vec3::new(0.0, target_offset_yz.0, target_offset_yz.1);
    if !workspace.contains(&center) {
        return Err(config_err(format!(
            "target offset {target_offset_yz:?} leaves the workspace"
        )));
    }
    let target = TargetObject {
        center,
        radius: base.target_radius,
        color: base.target_color,
    };

    let mut occluders = Vec::new();
    if base.with_occluder {
        let (axis, e1, e2) = placement_frame(&center, &base.viewpoint())?;
        let rot = Rotation3::from_axis_angle(&axis, occlusion_angle.to_radians());
        let displacement = rot * (e1 * occluder_offset_yz.0 + e2 * occluder_offset_yz.1);
        let occ_center = center + axis.into_inner() * base.occluder_standoff + displacement;
        if !workspace.contains(&occ_center) {
            return Err(config_err(format!(
                "occluder offset {occluder_offset_yz:?} leaves the workspace"
            )));
        }
        occluders.push(Occluder {
            center: occ_center,
            normal: axis,
            half_extent: base.occluder_half_extent,
            shape: base.occluder_shape,
            color: base.occluder_color,
            occlusion_angle,
            edge_axis: Unit::new_normalize(rot * e1),
        });
    }

    Ok(SceneModel {
        target,
        occluders,
        background_color: base.background_color,
        workspace,
    })
}

impl SceneModel {
    /// Check that no non-target surface color is accepted by the
    /// segmentation model and that the separation exceeds
    /// `min_mahalanobis` standard deviations.
    pub fn check_segmentable(&self, model: &SegmentationModel, min_mahalanobis: f64) -> Result<()> {
        let target = crate::segment::rgb_to_rotated_hsv(self.target.color);
        if !model.accepts(&target) {
            return Err(config_err("target color is rejected by the segmentation model"));
        }
        let others = self
            .occluders
            .iter()
            .map(|o| o.color)
            .chain(std::iter::once(self.background_color));
        for color in others {
            let x = crate::segment::rgb_to_rotated_hsv(color);
            let d = model.mahalanobis_sq(&x).sqrt();
            if d <= min_mahalanobis || model.accepts(&x) {
                return Err(config_err(format!(
                    "color {color:?} is only {d:.2} sigma from the target model"
                )));
            }
        }
        Ok(())
    }
}

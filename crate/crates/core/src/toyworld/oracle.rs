use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::gripper::{fingertip_fk, ToyGripper};
use super::object::ToyObject;
use crate::grasp::Grasp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Maximum |SDF| at every fingertip.
    pub tip_tolerance: f64,
    /// Allowed palm-to-surface distance band.
    pub palm_min: f64,
    pub palm_max: f64,
    /// Maximum angle in degrees between the approach axis and the direction
    /// from the palm to the object center.
    pub cone_degrees: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { tip_tolerance: 0.008, palm_min: 0.02, palm_max: 0.08, cone_degrees: 60.0 }
    }
}

/// Outcome of each oracle condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub tips_on_surface: bool,
    pub palm_in_band: bool,
    pub approach_ok: bool,
    pub centroid_inside: bool,
}

impl OracleCheck {
    pub fn success(&self) -> bool {
        self.tips_on_surface && self.palm_in_band && self.approach_ok && self.centroid_inside
    }
}

/// Evaluates every condition. `None` when the grasp has a degenerate rotation
/// or joints outside the gripper limits.
pub fn oracle_check(g: &Grasp, object: &ToyObject, gripper: &ToyGripper, cfg: &OracleConfig) -> Option<OracleCheck> {
    let tips = fingertip_fk(g, gripper).ok()?;
    let rot = g.rotation().ok()?;
    let p = g.position();
    let tips_on_surface = tips.iter().all(|t| object.sdf(t).abs() <= cfg.tip_tolerance);
    let palm = object.sdf(&p);
    let palm_in_band = (cfg.palm_min..=cfg.palm_max).contains(&palm);
    let to_center = object.center() - p;
    let approach = rot * Vector3::z();
    let approach_ok = to_center.norm() > 0.0 && approach.angle(&to_center) <= cfg.cone_degrees.to_radians();
    let centroid = tips.iter().sum::<Vector3<f64>>() / tips.len() as f64;
    let centroid_inside = object.sdf(&centroid) <= 0.0;
    Some(OracleCheck { tips_on_surface, palm_in_band, approach_ok, centroid_inside })
}

pub fn oracle_label(g: &Grasp, object: &ToyObject, gripper: &ToyGripper, cfg: &OracleConfig) -> bool {
    oracle_check(g, object, gripper, cfg).is_some_and(|c| c.success())
}

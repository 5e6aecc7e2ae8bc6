//! Racket–shuttle impact and hit-quality metrics.
//!
//! Contact is instantaneous at the racket position. The racket is treated as
//! infinitely heavy compared to the shuttle, so the shuttle's normal velocity
//! relative to the racket face is mirrored and the tangential part is kept.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TargetTuple;
use crate::frame;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContactError {
    #[error("racket normal must be a unit vector (|n| = {0})")]
    NonUnitNormal(f64),
}

const UNIT_TOL: f64 = 1e-9;

/// Outgoing shuttle velocity,
/// `v_out = v_in - 2 (v_in·n) n + 2 (v_racket·n) n`.
pub fn reflect(v_in: &Vector3<f64>, v_racket: &Vector3<f64>, n: &Vector3<f64>) -> Result<Vector3<f64>, ContactError> {
    reflect_with_restitution(v_in, v_racket, n, 1.0)
}

/// [`reflect`] with a restitution factor `e` on the relative normal velocity:
/// `v_out = v_in - (1 + e) ((v_in - v_racket)·n) n`. `e = 1` is the elastic case.
pub fn reflect_with_restitution(
    v_in: &Vector3<f64>,
    v_racket: &Vector3<f64>,
    n: &Vector3<f64>,
    restitution: f64,
) -> Result<Vector3<f64>, ContactError> {
    let norm = n.norm();
    if (norm - 1.0).abs() > UNIT_TOL {
        return Err(ContactError::NonUnitNormal(norm));
    }
    let k = 1.0 + restitution;
    let shuttle_n = n * v_in.dot(n);
    let racket_n = n * v_racket.dot(n);
    Ok(v_in - shuttle_n * k + racket_n * k)
}

/// Racket pose and velocity at the contact instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RacketState {
    pub p_ee: Vector3<f64>,
    pub q_ee: UnitQuaternion<f64>,
    pub v_ee: Vector3<f64>,
}

impl RacketState {
    /// Face normal, the -z axis of `q_ee`.
    pub fn normal(&self) -> Vector3<f64> {
        frame::face_normal(&self.q_ee)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HitThresholds {
    pub pos: f64,
    pub ori: f64,
}

impl Default for HitThresholds {
    fn default() -> Self {
        Self { pos: 0.10, ori: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitQuality {
    pub e_pos: f64,
    pub e_ori: f64,
    pub success: bool,
}

/// Angle between the z axes of two orientations, in `[0, π]`.
/// Insensitive to roll about either frame's own z axis.
pub fn z_axis_angle(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    let c = frame::z_axis(a).dot(&frame::z_axis(b)).clamp(-1.0, 1.0);
    c.acos()
}

/// Position and orientation error against a target. Thresholds are inclusive.
pub fn hit_quality(racket: &RacketState, target: &TargetTuple, thresholds: &HitThresholds) -> HitQuality {
    let e_pos = (racket.p_ee - target.p_star).norm();
    let e_ori = z_axis_angle(&racket.q_ee, &target.q_star);
    HitQuality {
        e_pos,
        e_ori,
        success: e_pos <= thresholds.pos && e_ori <= thresholds.ori,
    }
}

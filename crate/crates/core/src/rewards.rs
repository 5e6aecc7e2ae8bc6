//! Hit-related reward terms and their curriculum settings.
//!
//! Only the terms that depend on the racket and target are implemented.
//! Locomotion and regularization terms need full robot state and are left to
//! the RL environment; [`StageWeights`] lists the weights of the implemented
//! terms under their training-config names (`target_approach` is the weight of
//! [`r_track`]).

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("joint vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// Regional tracking: 1 inside 0.3 m, exponential decay beyond.
pub fn r_track(d: f64) -> f64 {
    (-4.0 * (d - 0.3).max(0.0)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwingSigmas {
    pub sigma_p: f64,
    pub sigma_r: f64,
    pub sigma_v: f64,
}

impl SwingSigmas {
    /// Loose tolerances at the start of swing training.
    pub const WIDE: SwingSigmas = SwingSigmas {
        sigma_p: 2.0,
        sigma_r: 8.0,
        sigma_v: 3.0,
    };
    /// Final tolerances.
    pub const TIGHT: SwingSigmas = SwingSigmas {
        sigma_p: 0.1,
        sigma_r: 1.0,
        sigma_v: 3.0,
    };
}

/// Swing-speed bonus, `1 - exp(-max(0, v·n*) / σ_v)`.
pub fn r_v(v_ee: &Vector3<f64>, n_star: &Vector3<f64>, sigma_v: f64) -> f64 {
    1.0 - (-(v_ee.dot(n_star).max(0.0)) / sigma_v).exp()
}

/// Hit-instant reward: coupled pose term plus 0.3 × speed bonus.
/// Position enters squared, orientation linearly.
pub fn r_swing(e_pos: f64, e_ori: f64, v_ee: &Vector3<f64>, n_star: &Vector3<f64>, s: &SwingSigmas) -> f64 {
    let pose = (-(e_pos * e_pos) / s.sigma_p).exp() * (-e_ori / s.sigma_r).exp();
    pose + 0.3 * r_v(v_ee, n_star, s.sigma_v)
}

/// `(ŷ_ee · ŷ_world)²`.
pub fn r_y_align(q_ee: &UnitQuaternion<f64>) -> f64 {
    let y = frame::y_axis(q_ee).y;
    y * y
}

/// Negative squared distance of the arm joints from the holding pose.
pub fn r_hold(q_arm: &[f64], q_hold: &[f64]) -> Result<f64, RewardError> {
    if q_arm.len() != q_hold.len() {
        return Err(RewardError::LengthMismatch(q_arm.len(), q_hold.len()));
    }
    Ok(-q_arm.iter().zip(q_hold).map(|(q, h)| (q - h).powi(2)).sum::<f64>())
}

/// Log-linear interpolation of the pose tolerances; `sigma_v` follows the
/// same rule, so equal endpoints keep it fixed. `progress` is clamped to
/// `[0, 1]`.
pub fn sigma_schedule(progress: f64, start: &SwingSigmas, end: &SwingSigmas) -> SwingSigmas {
    let u = progress.clamp(0.0, 1.0);
    let geo = |a: f64, b: f64| {
        if u == 0.0 {
            a
        } else if u == 1.0 {
            b
        } else {
            a * (b / a).powf(u)
        }
    };
    SwingSigmas {
        sigma_p: geo(start.sigma_p, end.sigma_p),
        sigma_r: geo(start.sigma_r, end.sigma_r),
        sigma_v: geo(start.sigma_v, end.sigma_v),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    S1,
    S2,
    S3,
}

/// Weights of the implemented terms; `None` means the term is off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageWeights {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_approach: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_swing: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_y_align: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_hold: Option<f64>,
}

impl StageWeights {
    pub fn preset(stage: Stage) -> Self {
        match stage {
            Stage::S1 => Self {
                target_approach: Some(30.0),
                r_swing: None,
                r_y_align: None,
                r_hold: None,
            },
            Stage::S2 => Self {
                target_approach: Some(15.0),
                r_swing: Some(4000.0),
                r_y_align: Some(5.0),
                r_hold: Some(10.0),
            },
            Stage::S3 => Self {
                target_approach: None,
                r_swing: Some(4000.0),
                r_y_align: Some(5.0),
                r_hold: Some(10.0),
            },
        }
    }
}

#[derive(Serialize)]
struct Presets {
    s1: StageWeights,
    s2: StageWeights,
    s3: StageWeights,
}

/// All three presets as a TOML fragment with `[s1]`, `[s2]`, `[s3]` tables.
pub fn stage_presets_toml() -> String {
    toml::to_string(&Presets {
        s1: StageWeights::preset(Stage::S1),
        s2: StageWeights::preset(Stage::S2),
        s3: StageWeights::preset(Stage::S3),
    })
    .expect("presets serialize")
}

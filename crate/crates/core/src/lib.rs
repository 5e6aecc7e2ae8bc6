//! Badminton shuttlecock flight toolkit.
//!
//! - [`dynamics`]: quadratic-drag flight model and RK4 integration
//! - [`corpus`]: random launches, hitting-zone filtering, intercept targets
//! - [`estimator`]: EKF tracking and intercept prediction
//! - [`contact`]: racket reflection and hit-quality metrics
//! - [`rewards`]: hit-reward reference formulas and stage weights
//! - [`rally`]: two-sided rally simulation with parametric hitters
//! - [`stream`]: NDJSON measurement service and replay

pub mod contact;
pub mod corpus;
pub mod dynamics;
pub mod estimator;
pub mod frame;
pub mod rally;
pub mod rewards;
pub mod seeds;
pub mod stream;

pub use corpus::{HitZone, LaunchRanges, TargetTuple};
pub use dynamics::{AeroParams, ShuttleState, Trajectory};

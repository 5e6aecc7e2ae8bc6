//! Shuttlecock flight model.
//!
//! The shuttle is a point mass under gravity and quadratic drag,
//!
//! ```text
//! dv/dt = g - |v| v / L
//! ```
//!
//! where `L = 2m / (rho S C_D)` is the aerodynamic length. Mass, air density,
//! cross-section and drag coefficient only ever appear through `L`, so `L` is
//! the single aerodynamic parameter carried by [`AeroParams`].
//!
//! Integration is classical fixed-step RK4. [`step_with_jacobian`] also
//! returns the exact derivative of the discrete RK4 map, which is what the
//! EKF uses as its transition matrix.

use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Aerodynamic length of the reference shuttle, meters.
pub const DEFAULT_AERO_LENGTH: f64 = 3.4;
/// Gravitational acceleration, m/s², acting along -z.
pub const DEFAULT_GRAVITY: f64 = 9.81;
/// Default integration step (500 Hz).
pub const DEFAULT_DT: f64 = 1.0 / 500.0;

pub type Matrix6 = SMatrix<f64, 6, 6>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("aerodynamic length must be positive, got {0}")]
    InvalidLength(f64),
    #[error("gravity must be positive and finite, got {0}")]
    InvalidGravity(f64),
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("no stop condition reached within {max_time} s")]
    NonTermination { max_time: f64 },
    #[error("trajectory must contain at least one sample")]
    EmptyTrajectory,
    #[error("trajectory samples are not uniformly spaced at dt = {dt} (sample {index})")]
    NonUniformSpacing { dt: f64, index: usize },
}

/// Position and velocity of the shuttle in the world frame (z up).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShuttleState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl ShuttleState {
    pub fn new(p: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { p, v }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.v.iter()).all(|c| c.is_finite())
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.p.x, self.p.y, self.p.z, self.v.x, self.v.y, self.v.z]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            p: Vector3::new(a[0], a[1], a[2]),
            v: Vector3::new(a[3], a[4], a[5]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeroParams {
    /// Aerodynamic length `L`, meters. `f64::INFINITY` switches drag off.
    pub length: f64,
    /// Gravitational acceleration, m/s².
    pub gravity: f64,
}

impl Default for AeroParams {
    fn default() -> Self {
        Self {
            length: DEFAULT_AERO_LENGTH,
            gravity: DEFAULT_GRAVITY,
        }
    }
}

impl AeroParams {
    pub fn new(length: f64, gravity: f64) -> Result<Self, DynamicsError> {
        let params = Self { length, gravity };
        params.validate()?;
        Ok(params)
    }

    /// Pure ballistic flight (no drag).
    pub fn drag_free() -> Self {
        Self {
            length: f64::INFINITY,
            gravity: DEFAULT_GRAVITY,
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.length > 0.0) {
            return Err(DynamicsError::InvalidLength(self.length));
        }
        if !(self.gravity > 0.0 && self.gravity.is_finite()) {
            return Err(DynamicsError::InvalidGravity(self.gravity));
        }
        Ok(())
    }

    /// Terminal sinking speed `sqrt(g L)`.
    pub fn terminal_speed(&self) -> f64 {
        (self.gravity * self.length).sqrt()
    }
}

#[inline]
fn accel_of(v: &Vector3<f64>, params: &AeroParams) -> Vector3<f64> {
    let drag = v * (v.norm() / params.length);
    Vector3::new(-drag.x, -drag.y, -params.gravity - drag.z)
}

/// Acceleration of the shuttle in the given state.
pub fn accel(state: &ShuttleState, params: &AeroParams) -> Vector3<f64> {
    accel_of(&state.v, params)
}

/// Jacobian of [`accel`] with respect to velocity,
/// `-(|v| I + v vᵀ / |v|) / L`.
///
/// The drag term is not differentiable at `v = 0`; the zero matrix is
/// returned there.
pub fn drag_jacobian(v: &Vector3<f64>, params: &AeroParams) -> Matrix3<f64> {
    let speed = v.norm();
    if speed == 0.0 || params.length.is_infinite() {
        return Matrix3::zeros();
    }
    -(Matrix3::identity() * speed + v * v.transpose() / speed) / params.length
}

#[inline]
fn rk4(state: &ShuttleState, dt: f64, params: &AeroParams) -> ShuttleState {
    let v1 = state.v;
    let a1 = accel_of(&v1, params);
    let v2 = state.v + a1 * (0.5 * dt);
    let a2 = accel_of(&v2, params);
    let v3 = state.v + a2 * (0.5 * dt);
    let a3 = accel_of(&v3, params);
    let v4 = state.v + a3 * dt;
    let a4 = accel_of(&v4, params);
    ShuttleState {
        p: state.p + (v1 + (v2 + v3) * 2.0 + v4) * (dt / 6.0),
        v: state.v + (a1 + (a2 + a3) * 2.0 + a4) * (dt / 6.0),
    }
}

fn check_dt(dt: f64) -> Result<(), DynamicsError> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(DynamicsError::InvalidStep(dt))
    }
}

/// Advance one RK4 step of length `dt`.
pub fn step(state: &ShuttleState, dt: f64, params: &AeroParams) -> Result<ShuttleState, DynamicsError> {
    check_dt(dt)?;
    Ok(rk4(state, dt, params))
}

/// `Df · S` for the flight vector field `f(p, v) = (v, a(v))`, where `S` is a
/// 6×6 sensitivity matrix.
fn field_times(jv: &Matrix3<f64>, s: &Matrix6) -> Matrix6 {
    let lower = s.fixed_rows::<3>(3);
    let mut out = Matrix6::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&lower);
    out.fixed_rows_mut::<3>(3).copy_from(&(jv * lower));
    out
}

/// One RK4 step together with the exact Jacobian of the step map with
/// respect to the state `[p, v]`.
pub fn step_with_jacobian(
    state: &ShuttleState,
    dt: f64,
    params: &AeroParams,
) -> Result<(ShuttleState, Matrix6), DynamicsError> {
    check_dt(dt)?;
    let eye = Matrix6::identity();

    let v1 = state.v;
    let a1 = accel_of(&v1, params);
    let k1 = field_times(&drag_jacobian(&v1, params), &eye);

    let v2 = state.v + a1 * (0.5 * dt);
    let a2 = accel_of(&v2, params);
    let k2 = field_times(&drag_jacobian(&v2, params), &(eye + k1 * (0.5 * dt)));

    let v3 = state.v + a2 * (0.5 * dt);
    let a3 = accel_of(&v3, params);
    let k3 = field_times(&drag_jacobian(&v3, params), &(eye + k2 * (0.5 * dt)));

    let v4 = state.v + a3 * dt;
    let k4 = field_times(&drag_jacobian(&v4, params), &(eye + k3 * dt));

    let next = rk4(state, dt, params);
    let jac = eye + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
    Ok((next, jac))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopEvent {
    /// Shuttle at or below the floor while not rising.
    Ground,
    /// Position coordinate crosses `value` (either direction).
    Plane { axis: Axis, value: f64 },
}

impl StopEvent {
    fn triggered(&self, prev: Option<&Sample>, cur: &Sample) -> bool {
        match *self {
            StopEvent::Ground => cur.state.p.z <= 0.0 && cur.state.v.z <= 0.0,
            StopEvent::Plane { axis, value } => match prev {
                None => false,
                Some(prev) => {
                    let a = prev.state.p[axis.index()] - value;
                    let b = cur.state.p[axis.index()] - value;
                    a != 0.0 && a * b <= 0.0
                }
            },
        }
    }
}

/// When to end [`simulate`].
///
/// With an event, reaching `max_time` first is a [`DynamicsError::NonTermination`].
/// Without one the flight simply runs for `max_time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopCondition {
    pub event: Option<StopEvent>,
    pub max_time: f64,
}

impl StopCondition {
    pub fn ground(max_time: f64) -> Self {
        Self {
            event: Some(StopEvent::Ground),
            max_time,
        }
    }

    pub fn plane(axis: Axis, value: f64, max_time: f64) -> Self {
        Self {
            event: Some(StopEvent::Plane { axis, value }),
            max_time,
        }
    }

    pub fn max_time(max_time: f64) -> Self {
        Self { event: None, max_time }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub state: ShuttleState,
}

/// Uniformly time-stamped flight samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dt: f64,
    samples: Vec<Sample>,
}

impl Trajectory {
    pub fn new(dt: f64, samples: Vec<Sample>) -> Result<Self, DynamicsError> {
        check_dt(dt)?;
        if samples.is_empty() {
            return Err(DynamicsError::EmptyTrajectory);
        }
        let t0 = samples[0].t;
        for (index, s) in samples.iter().enumerate() {
            let expected = t0 + index as f64 * dt;
            if (s.t - expected).abs() > 1e-9 * (1.0 + expected.abs()) {
                return Err(DynamicsError::NonUniformSpacing { dt, index });
            }
        }
        Ok(Self { dt, samples })
    }

    /// Rebuild from `[t, px, py, pz, vx, vy, vz]` rows.
    pub fn from_rows(dt: f64, rows: &[[f64; 7]]) -> Result<Self, DynamicsError> {
        let samples = rows
            .iter()
            .map(|r| Sample {
                t: r[0],
                state: ShuttleState::from_array([r[1], r[2], r[3], r[4], r[5], r[6]]),
            })
            .collect();
        Self::new(dt, samples)
    }

    pub fn rows(&self) -> Vec<[f64; 7]> {
        self.samples
            .iter()
            .map(|s| {
                let a = s.state.to_array();
                [s.t, a[0], a[1], a[2], a[3], a[4], a[5]]
            })
            .collect()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn last(&self) -> &Sample {
        &self.samples[self.samples.len() - 1]
    }

    pub fn start_time(&self) -> f64 {
        self.first().t
    }

    pub fn end_time(&self) -> f64 {
        self.last().t
    }

    /// Every `stride`-th sample, keeping the first.
    pub fn decimate(&self, stride: usize) -> Trajectory {
        let stride = stride.max(1);
        Trajectory {
            dt: self.dt * stride as f64,
            samples: self.samples.iter().step_by(stride).copied().collect(),
        }
    }

    /// State at time `t` by cubic Hermite interpolation between the
    /// bracketing samples (position from p/v, velocity from v/a).
    pub fn state_at(&self, t: f64, params: &AeroParams) -> Option<ShuttleState> {
        let t0 = self.start_time();
        if t < t0 || t > self.end_time() {
            return None;
        }
        let n = self.samples.len();
        if n == 1 {
            return Some(self.samples[0].state);
        }
        let k = (((t - t0) / self.dt).floor() as usize).min(n - 2);
        let a = &self.samples[k];
        let b = &self.samples[k + 1];
        let h = b.t - a.t;
        let s = (t - a.t) / h;
        let (h00, h10, h01, h11) = hermite_basis(s);
        let p = a.state.p * h00 + a.state.v * (h * h10) + b.state.p * h01 + b.state.v * (h * h11);
        let aa = accel(&a.state, params);
        let ab = accel(&b.state, params);
        let v = a.state.v * h00 + aa * (h * h10) + b.state.v * h01 + ab * (h * h11);
        Some(ShuttleState { p, v })
    }

    /// First descent through `z = 0`, linearly interpolated. Returns the
    /// landing time and the (x, y) touchdown point.
    pub fn landing(&self) -> Option<(f64, [f64; 2])> {
        self.samples.windows(2).find_map(|w| {
            let (a, b) = (&w[0], &w[1]);
            if a.state.p.z > 0.0 && b.state.p.z <= 0.0 {
                let s = a.state.p.z / (a.state.p.z - b.state.p.z);
                let p = a.state.p + (b.state.p - a.state.p) * s;
                Some((a.t + s * (b.t - a.t), [p.x, p.y]))
            } else {
                None
            }
        })
    }
}

fn hermite_basis(s: f64) -> (f64, f64, f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    (
        2.0 * s3 - 3.0 * s2 + 1.0,
        s3 - 2.0 * s2 + s,
        -2.0 * s3 + 3.0 * s2,
        s3 - s2,
    )
}

/// Integrate from `state0` at `t = 0` until `stop` says otherwise.
///
/// The final sample is the first one satisfying the stop event.
pub fn simulate(
    state0: &ShuttleState,
    params: &AeroParams,
    dt: f64,
    stop: StopCondition,
) -> Result<Trajectory, DynamicsError> {
    simulate_from(state0, 0.0, params, dt, stop)
}

/// [`simulate`] with the clock starting at `t0`.
pub fn simulate_from(
    state0: &ShuttleState,
    t0: f64,
    params: &AeroParams,
    dt: f64,
    stop: StopCondition,
) -> Result<Trajectory, DynamicsError> {
    check_dt(dt)?;
    params.validate()?;
    let max_steps = (stop.max_time / dt).ceil().max(0.0) as usize;
    let mut samples = Vec::with_capacity(max_steps.min(4096) + 1);
    samples.push(Sample { t: t0, state: *state0 });
    if let Some(event) = stop.event {
        if event.triggered(None, &samples[0]) {
            return Ok(Trajectory { dt, samples });
        }
    }
    let mut state = *state0;
    for k in 1..=max_steps {
        state = rk4(&state, dt, params);
        let cur = Sample {
            t: t0 + k as f64 * dt,
            state,
        };
        let hit = stop.event.map(|e| e.triggered(samples.last(), &cur)).unwrap_or(false);
        samples.push(cur);
        if hit {
            return Ok(Trajectory { dt, samples });
        }
    }
    match stop.event {
        None => Ok(Trajectory { dt, samples }),
        Some(_) => Err(DynamicsError::NonTermination {
            max_time: stop.max_time,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn state(p: [f64; 3], v: [f64; 3]) -> ShuttleState {
        ShuttleState::new(Vector3::from(p), Vector3::from(v))
    }

    #[test]
    fn gravity_only_at_rest() {
        let a = accel(&state([0.0; 3], [0.0; 3]), &AeroParams::default());
        assert_eq!(a, Vector3::new(0.0, 0.0, -9.81));
    }

    #[test]
    fn terminal_velocity_balances() {
        let params = AeroParams::default();
        let vt = (9.81f64 * 3.4).sqrt();
        let a = accel(&state([0.0; 3], [0.0, 0.0, -vt]), &params);
        assert!(a.norm() < 1e-12, "{a}");
    }

    #[test]
    fn horizontal_drag_value() {
        let a = accel(&state([0.0; 3], [10.0, 0.0, 0.0]), &AeroParams::default());
        assert_relative_eq!(a.x, -100.0 / 3.4, epsilon = 1e-12);
        assert_relative_eq!(a.x, -29.412, epsilon = 1e-3);
        assert_eq!(a.z, -9.81);
    }

    #[test]
    fn jacobian_diagonal_case() {
        let j = drag_jacobian(&Vector3::new(3.4, 0.0, 0.0), &AeroParams::default());
        assert_relative_eq!(
            j,
            Matrix3::from_diagonal(&Vector3::new(-2.0, -1.0, -1.0)),
            epsilon = 1e-12
        );
    }

    #[test]
    fn jacobian_zero_at_rest() {
        assert_eq!(
            drag_jacobian(&Vector3::zeros(), &AeroParams::default()),
            Matrix3::zeros()
        );
    }

    #[test]
    fn jacobian_spectrum() {
        let params = AeroParams::default();
        let v = Vector3::new(-7.0, 1.5, 4.0);
        let j = drag_jacobian(&v, &params);
        assert_relative_eq!(j, j.transpose(), epsilon = 1e-15);
        let mut eig: Vec<f64> = j.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let s = v.norm() / params.length;
        assert_relative_eq!(eig[0], -2.0 * s, epsilon = 1e-12);
        assert_relative_eq!(eig[1], -s, epsilon = 1e-12);
        assert_relative_eq!(eig[2], -s, epsilon = 1e-12);
    }

    #[test]
    fn ballistic_step_matches_closed_form() {
        let s = step(&state([0.0; 3], [1.0, 0.0, 0.0]), 0.1, &AeroParams::drag_free()).unwrap();
        assert_relative_eq!(s.p, Vector3::new(0.1, 0.0, -0.04905), epsilon = 1e-14);
        assert_relative_eq!(s.v, Vector3::new(1.0, 0.0, -0.981), epsilon = 1e-14);
    }

    #[test]
    fn zero_step_rejected() {
        let s0 = state([0.0; 3], [1.0, 0.0, 0.0]);
        assert_eq!(
            step(&s0, 0.0, &AeroParams::default()),
            Err(DynamicsError::InvalidStep(0.0))
        );
        assert!(step(&s0, -0.1, &AeroParams::default()).is_err());
    }

    #[test]
    fn terminal_state_is_steady() {
        let params = AeroParams::default();
        let s0 = state([0.0, 0.0, 10.0], [0.0, 0.0, -params.terminal_speed()]);
        let s1 = step(&s0, DEFAULT_DT, &params).unwrap();
        assert!((s1.v - s0.v).norm() < 1e-12);
    }

    #[test]
    fn invalid_params() {
        assert!(AeroParams::new(0.0, 9.81).is_err());
        assert!(AeroParams::new(3.4, -1.0).is_err());
        assert!(AeroParams::new(3.4, 9.81).is_ok());
        assert!(AeroParams::drag_free().validate().is_ok());
    }

    #[test]
    fn vertical_drop_lands() {
        let traj = simulate(
            &state([0.0, 0.0, 1.0], [0.0; 3]),
            &AeroParams::default(),
            DEFAULT_DT,
            StopCondition::ground(5.0),
        )
        .unwrap();
        assert!(traj.last().state.p.z <= 0.0);
        assert!(traj.samples()[traj.len() - 2].state.p.z > 0.0);
    }

    #[test]
    fn drag_free_drop_time() {
        let traj = simulate(
            &state([0.0, 0.0, 1.0], [0.0; 3]),
            &AeroParams::drag_free(),
            DEFAULT_DT,
            StopCondition::ground(5.0),
        )
        .unwrap();
        let oracle = (2.0f64 / 9.81).sqrt();
        let (t_land, _) = traj.landing().unwrap();
        assert!((t_land - oracle).abs() < 1e-6, "{t_land} vs {oracle}");
        assert!((traj.end_time() - oracle).abs() <= DEFAULT_DT);
    }

    #[test]
    fn non_termination_reported() {
        let r = simulate(
            &state([0.0, 0.0, 100.0], [0.0; 3]),
            &AeroParams::default(),
            DEFAULT_DT,
            StopCondition::ground(1.0),
        );
        assert_eq!(r, Err(DynamicsError::NonTermination { max_time: 1.0 }));
    }

    #[test]
    fn max_time_only_runs_full_span() {
        let traj = simulate(
            &state([0.0, 0.0, 100.0], [0.0; 3]),
            &AeroParams::default(),
            0.01,
            StopCondition::max_time(0.5),
        )
        .unwrap();
        assert_eq!(traj.len(), 51);
        assert_relative_eq!(traj.end_time(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn plane_crossing_stops() {
        let traj = simulate(
            &state([5.0, 0.0, 1.0], [-10.0, 0.0, 5.0]),
            &AeroParams::default(),
            DEFAULT_DT,
            StopCondition::plane(Axis::X, 0.0, 5.0),
        )
        .unwrap();
        assert!(traj.last().state.p.x <= 0.0);
        assert!(traj.samples()[traj.len() - 2].state.p.x > 0.0);
    }

    #[test]
    fn hermite_reproduces_samples_and_midpoints() {
        let params = AeroParams::default();
        let s0 = state([6.0, 0.3, 1.0], [-18.0, 1.0, 12.0]);
        let coarse = simulate(&s0, &params, 0.01, StopCondition::max_time(0.5)).unwrap();
        let fine = simulate(&s0, &params, 0.0005, StopCondition::max_time(0.5)).unwrap();
        let t = 0.2375;
        let a = coarse.state_at(t, &params).unwrap();
        let b = fine.state_at(t, &params).unwrap();
        assert!((a.p - b.p).norm() < 1e-5);
        assert!((a.v - b.v).norm() < 1e-3);
        let k = coarse.samples()[7];
        assert_eq!(coarse.state_at(k.t, &params).unwrap().p, k.state.p);
        assert!(coarse.state_at(0.6, &params).is_none());
    }

    #[test]
    fn trajectory_rejects_bad_spacing() {
        let s = ShuttleState::new(Vector3::zeros(), Vector3::zeros());
        let bad = vec![Sample { t: 0.0, state: s }, Sample { t: 0.3, state: s }];
        assert!(matches!(
            Trajectory::new(0.1, bad),
            Err(DynamicsError::NonUniformSpacing { index: 1, .. })
        ));
        assert_eq!(Trajectory::new(0.1, vec![]), Err(DynamicsError::EmptyTrajectory));
    }
}

//! Extended Kalman filter over the shuttle flight model, intercept
//! prediction, and the batch accuracy evaluation (prediction error against
//! lead time before impact).
//!
//! The state is `[x, y, z, vx, vy, vz]` in the world frame; only position is
//! measured.

use std::io::Write;

use nalgebra::{Matrix3, SMatrix, Vector3};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, CorpusRecord, TargetTuple};
use crate::dynamics::{self, AeroParams, DynamicsError, Matrix6, ShuttleState, Trajectory};
use crate::seeds;

pub type Vector6 = SMatrix<f64, 6, 1>;
type Matrix3x6 = SMatrix<f64, 3, 6>;
type Matrix6x3 = SMatrix<f64, 6, 3>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("innovation covariance is not positive definite")]
    SingularInnovation,
    #[error("measurement at t = {t} is not after the last update at t = {last}")]
    OutOfOrder { t: f64, last: f64 },
    #[error("measurement contains non-finite values")]
    NonFinite,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Filter mean, covariance and noise model for one flight.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfTrack {
    pub mean: Vector6,
    pub cov: Matrix6,
    /// Process noise added once per [`ekf_predict`] call.
    pub q_proc: Matrix6,
    pub r_meas: Matrix3<f64>,
    /// Filter clock, seconds.
    pub t: f64,
}

impl EkfTrack {
    pub fn state(&self) -> ShuttleState {
        ShuttleState::new(
            Vector3::new(self.mean[0], self.mean[1], self.mean[2]),
            Vector3::new(self.mean[3], self.mean[4], self.mean[5]),
        )
    }

    fn with_state(mut self, s: &ShuttleState) -> Self {
        self.mean = Vector6::from_column_slice(&s.to_array());
        self
    }
}

/// Noise and start-up settings of the tracker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EkfConfig {
    /// Per-axis position measurement standard deviation, m.
    pub meas_sigma: f64,
    /// White acceleration noise driving the velocity states, m/s².
    pub accel_sigma: f64,
    /// Prior velocity standard deviation at track start, m/s.
    pub init_vel_sigma: f64,
    /// Updates needed before predictions are reported.
    pub min_measurements: usize,
    /// Longest single prediction step; longer gaps are subdivided.
    pub max_predict_step: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self {
            meas_sigma: 0.005,
            accel_sigma: 0.5,
            init_vel_sigma: 50.0,
            min_measurements: 5,
            max_predict_step: 0.01,
        }
    }
}

impl EkfConfig {
    pub fn r_meas(&self) -> Matrix3<f64> {
        Matrix3::identity() * (self.meas_sigma * self.meas_sigma)
    }

    /// `diag(0, 0, 0, s²dt, s²dt, s²dt)`.
    pub fn process_noise(&self, dt: f64) -> Matrix6 {
        let q = self.accel_sigma * self.accel_sigma * dt;
        Matrix6::from_diagonal(&Vector6::from_column_slice(&[0.0, 0.0, 0.0, q, q, q]))
    }

    /// Track started from a single position fix with zero velocity prior.
    pub fn initial_track(&self, t: f64, z: &Vector3<f64>) -> EkfTrack {
        let r = self.r_meas();
        let mut cov = Matrix6::zeros();
        cov.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        let pv = self.init_vel_sigma * self.init_vel_sigma;
        cov.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * pv));
        EkfTrack {
            mean: Vector6::new(z.x, z.y, z.z, 0.0, 0.0, 0.0),
            cov,
            q_proc: Matrix6::zeros(),
            r_meas: r,
            t,
        }
    }
}

fn symmetrize(m: &Matrix6) -> Matrix6 {
    (m + m.transpose()) * 0.5
}

/// Propagate the mean one RK4 step and the covariance with the exact
/// Jacobian of that step, then add `q_proc`.
pub fn ekf_predict(track: &EkfTrack, dt: f64, params: &AeroParams) -> Result<EkfTrack, EstimatorError> {
    let (next, f) = dynamics::step_with_jacobian(&track.state(), dt, params)?;
    let cov = symmetrize(&(f * track.cov * f.transpose() + track.q_proc));
    Ok(EkfTrack {
        cov,
        t: track.t + dt,
        ..track.clone()
    }
    .with_state(&next))
}

fn observation() -> Matrix3x6 {
    let mut h = Matrix3x6::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    h
}

/// Position update with `H = [I 0]` and a Joseph-form covariance update.
pub fn ekf_update(track: &EkfTrack, z: &Vector3<f64>, r_meas: &Matrix3<f64>) -> Result<EkfTrack, EstimatorError> {
    if !z.iter().all(|c| c.is_finite()) {
        return Err(EstimatorError::NonFinite);
    }
    let h = observation();
    let p = &track.cov;
    let s = h * p * h.transpose() + r_meas;
    let s = (s + s.transpose()) * 0.5;
    let chol = s.cholesky().ok_or(EstimatorError::SingularInnovation)?;
    // K = P Hᵀ S⁻¹, computed as (S⁻¹ H P)ᵀ
    let k: Matrix6x3 = chol.solve(&(h * p)).transpose();
    let innovation = z - h * track.mean;
    let mean = track.mean + k * innovation;
    let ikh = Matrix6::identity() - k * h;
    let cov = symmetrize(&(ikh * p * ikh.transpose() + k * r_meas * k.transpose()));
    Ok(EkfTrack {
        mean,
        cov,
        r_meas: *r_meas,
        ..track.clone()
    })
}

/// Predicted hitting point on the target plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterceptPrediction {
    pub target: TargetTuple,
    /// `target.t_star - track.t`, always positive.
    pub time_to_impact: f64,
}

/// Roll the mean forward with [`dynamics::DEFAULT_DT`] steps until it first
/// drops below `z_target`. `None` when that does not happen within `horizon`.
pub fn predict_intercept(
    track: &EkfTrack,
    z_target: f64,
    horizon: f64,
    params: &AeroParams,
) -> Option<InterceptPrediction> {
    predict_intercept_with_step(track, z_target, horizon, params, dynamics::DEFAULT_DT)
}

pub fn predict_intercept_with_step(
    track: &EkfTrack,
    z_target: f64,
    horizon: f64,
    params: &AeroParams,
    dt: f64,
) -> Option<InterceptPrediction> {
    if !(horizon > 0.0 && dt > 0.0) {
        return None;
    }
    let steps = (horizon / dt).ceil() as usize;
    let mut cur = track.state();
    for k in 0..steps {
        let next = dynamics::step(&cur, dt, params).ok()?;
        if cur.p.z >= z_target && next.p.z < z_target {
            let s = (cur.p.z - z_target) / (cur.p.z - next.p.z);
            let t_hit = track.t + (k as f64 + s) * dt;
            if t_hit > track.t {
                let crossing = ShuttleState::new(cur.p + (next.p - cur.p) * s, cur.v + (next.v - cur.v) * s);
                let target = corpus::target_from_entry(&crossing, t_hit, z_target).ok()?;
                return Some(InterceptPrediction {
                    target,
                    time_to_impact: t_hit - track.t,
                });
            }
        }
        cur = next;
    }
    None
}

/// Measurement-driven EKF for a single flight: starts the track on the first
/// fix and keeps the filter clock in step with measurement timestamps.
#[derive(Debug, Clone)]
pub struct ShuttleTracker {
    config: EkfConfig,
    params: AeroParams,
    track: Option<EkfTrack>,
    updates: usize,
}

impl ShuttleTracker {
    pub fn new(config: EkfConfig, params: AeroParams) -> Self {
        Self {
            config,
            params,
            track: None,
            updates: 0,
        }
    }

    pub fn track(&self) -> Option<&EkfTrack> {
        self.track.as_ref()
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn is_ready(&self) -> bool {
        self.track.is_some() && self.updates >= self.config.min_measurements.max(1)
    }

    pub fn last_time(&self) -> Option<f64> {
        self.track.as_ref().map(|t| t.t)
    }

    /// Fold in a position fix at time `t`. Timestamps must strictly increase.
    pub fn push(&mut self, t: f64, z: &Vector3<f64>) -> Result<(), EstimatorError> {
        if !t.is_finite() || !z.iter().all(|c| c.is_finite()) {
            return Err(EstimatorError::NonFinite);
        }
        let Some(track) = self.track.as_ref() else {
            self.track = Some(self.config.initial_track(t, z));
            self.updates = 1;
            return Ok(());
        };
        if t <= track.t {
            return Err(EstimatorError::OutOfOrder { t, last: track.t });
        }
        let gap = t - track.t;
        let n = (gap / self.config.max_predict_step).ceil().max(1.0) as usize;
        let sub = gap / n as f64;
        let mut next = track.clone();
        next.q_proc = self.config.process_noise(sub);
        for _ in 0..n {
            next = ekf_predict(&next, sub, &self.params)?;
        }
        next.t = t;
        let next = ekf_update(&next, z, &self.config.r_meas())?;
        self.track = Some(next);
        self.updates += 1;
        Ok(())
    }

    /// Intercept prediction once enough measurements are in.
    pub fn predict(&self, z_target: f64, horizon: f64) -> Option<InterceptPrediction> {
        if !self.is_ready() {
            return None;
        }
        predict_intercept(self.track.as_ref()?, z_target, horizon, &self.params)
    }
}

// ---------------------------------------------------------------------------
// Batch accuracy evaluation

/// A simulated flight with its known intercept.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub traj: Trajectory,
    pub t_star: f64,
    pub p_star: Vector3<f64>,
}

impl GroundTruth {
    pub fn from_record(record: &CorpusRecord, config: &corpus::CorpusConfig) -> Result<Self, corpus::CorpusError> {
        Ok(Self {
            traj: record.flight(config)?,
            t_star: record.target.t_star,
            p_star: record.target.p_star,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Per-axis Gaussian noise added to synthetic measurements, m.
    pub noise_sigma: f64,
    pub rate_hz: f64,
    /// Lead times before impact at which predictions are scored, s.
    pub lead_times: Vec<f64>,
    pub ekf: EkfConfig,
    pub aero: AeroParams,
    /// Rollout horizon for intercept prediction, s.
    pub horizon: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 0.005,
            rate_hz: 210.0,
            lead_times: default_lead_times(),
            ekf: EkfConfig::default(),
            aero: AeroParams::default(),
            horizon: 3.0,
            seed: 0,
        }
    }
}

/// 1.00, 0.95, ..., 0.05 s.
pub fn default_lead_times() -> Vec<f64> {
    (0..20).map(|k| (20 - k) as f64 * 0.05).collect()
}

/// Timestamped position fix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fix {
    pub t: f64,
    pub p: Vector3<f64>,
}

/// Noisy position fixes of flight `index` at `rate_hz`, from launch until the
/// trajectory ends. Noise comes from the `(seed, "noise", index)` stream.
pub fn synthetic_measurements(
    truth: &Trajectory,
    params: &AeroParams,
    noise_sigma: f64,
    rate_hz: f64,
    seed: u64,
    index: u64,
) -> Vec<Fix> {
    let mut rng = seeds::substream(seed, seeds::NOISE, index);
    let normal = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
    let t0 = truth.start_time();
    (0..)
        .map(|k| t0 + k as f64 / rate_hz)
        .take_while(|&t| t <= truth.end_time())
        .filter_map(|t| truth.state_at(t, params).map(|s| (t, s.p)))
        .map(|(t, p)| {
            let noise = if noise_sigma > 0.0 {
                Vector3::new(
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                )
            } else {
                Vector3::zeros()
            };
            Fix { t, p: p + noise }
        })
        .collect()
}

/// Prediction error of one flight at one lead time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadError {
    pub lead_time: f64,
    pub pos_err: f64,
    pub t_err: f64,
}

/// Errors of one flight, one entry per lead time; `None` where too few
/// measurements were available or no crossing was predicted.
pub fn evaluate_flight(truth: &GroundTruth, fixes: &[Fix], config: &EvalConfig) -> Vec<Option<LeadError>> {
    let mut order: Vec<usize> = (0..config.lead_times.len()).collect();
    // largest lead first = earliest cutoff first
    order.sort_by(|&a, &b| config.lead_times[b].total_cmp(&config.lead_times[a]));
    let mut out = vec![None; config.lead_times.len()];
    let mut tracker = ShuttleTracker::new(config.ekf, config.aero);
    let mut next_fix = 0;
    for k in order {
        let lead = config.lead_times[k];
        let cutoff = truth.t_star - lead;
        while next_fix < fixes.len() && fixes[next_fix].t <= cutoff + 1e-12 {
            if tracker.push(fixes[next_fix].t, &fixes[next_fix].p).is_err() {
                break;
            }
            next_fix += 1;
        }
        out[k] = tracker.predict(truth.p_star.z, config.horizon).map(|pred| LeadError {
            lead_time: lead,
            pos_err: (pred.target.p_star - truth.p_star).norm(),
            t_err: (pred.target.t_star - truth.t_star).abs(),
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurvePoint {
    pub lead_time: f64,
    pub pos_err_mean: f64,
    pub pos_err_std: f64,
    pub t_err_mean: f64,
    pub t_err_std: f64,
    /// Flights contributing to this lead time.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub curve: Vec<ErrorCurvePoint>,
    /// `per_flight[i][k]`: flight `i` at `lead_times[k]`.
    pub per_flight: Vec<Vec<Option<LeadError>>>,
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Score the tracker on each flight at every lead time and aggregate.
pub fn evaluate_predictor(truths: &[GroundTruth], config: &EvalConfig) -> EvalReport {
    let per_flight: Vec<Vec<Option<LeadError>>> = truths
        .iter()
        .enumerate()
        .map(|(i, truth)| {
            let fixes = synthetic_measurements(
                &truth.traj,
                &config.aero,
                config.noise_sigma,
                config.rate_hz,
                config.seed,
                i as u64,
            );
            evaluate_flight(truth, &fixes, config)
        })
        .collect();
    EvalReport::from_per_flight(&config.lead_times, per_flight)
}

impl EvalReport {
    /// Mean and sample std per lead time over the flights that produced a
    /// prediction there.
    pub fn from_per_flight(lead_times: &[f64], per_flight: Vec<Vec<Option<LeadError>>>) -> Self {
        let curve = lead_times
            .iter()
            .enumerate()
            .map(|(k, &lead)| {
                let errs: Vec<LeadError> = per_flight.iter().filter_map(|f| f.get(k).copied().flatten()).collect();
                let pos: Vec<f64> = errs.iter().map(|e| e.pos_err).collect();
                let tim: Vec<f64> = errs.iter().map(|e| e.t_err).collect();
                let (pos_err_mean, pos_err_std) = mean_std(&pos);
                let (t_err_mean, t_err_std) = mean_std(&tim);
                ErrorCurvePoint {
                    lead_time: lead,
                    pos_err_mean,
                    pos_err_std,
                    t_err_mean,
                    t_err_std,
                    n: errs.len(),
                }
            })
            .collect();
        EvalReport { curve, per_flight }
    }

    pub fn at(&self, lead_time: f64) -> Option<&ErrorCurvePoint> {
        self.curve.iter().find(|p| (p.lead_time - lead_time).abs() < 1e-9)
    }

    pub fn write_csv<W: Write>(&self, mut w: W, header: &str) -> std::io::Result<()> {
        corpus::write_comment_header(&mut w, header)?;
        writeln!(w, "lead_time_s,pos_err_mean_m,pos_err_std_m,t_err_mean_s,t_err_std_s,n")?;
        for p in &self.curve {
            writeln!(
                w,
                "{:.2},{},{},{},{},{}",
                p.lead_time, p.pos_err_mean, p.pos_err_std, p.t_err_mean, p.t_err_std, p.n
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn track_at(s: &ShuttleState) -> EkfTrack {
        EkfTrack {
            mean: Vector6::from_column_slice(&s.to_array()),
            cov: Matrix6::identity() * 1e-2,
            q_proc: Matrix6::zeros(),
            r_meas: Matrix3::identity() * 1e-6,
            t: 0.0,
        }
    }

    fn state() -> ShuttleState {
        ShuttleState::new(Vector3::new(6.0, 0.2, 1.0), Vector3::new(-18.0, 0.5, 12.0))
    }

    #[test]
    fn predict_mean_is_dynamics_step() {
        let params = AeroParams::default();
        let t = track_at(&state());
        let next = ekf_predict(&t, 0.002, &params).unwrap();
        let expected = dynamics::step(&state(), 0.002, &params).unwrap();
        assert_eq!(next.state(), expected);
        assert_relative_eq!(next.t, 0.002);
    }

    #[test]
    fn noise_injection_from_zero_covariance() {
        let mut t = track_at(&state());
        t.cov = Matrix6::zeros();
        t.q_proc = Matrix6::identity() * 0.3;
        let next = ekf_predict(&t, 0.002, &AeroParams::default()).unwrap();
        assert_relative_eq!(next.cov, Matrix6::identity() * 0.3, epsilon = 1e-15);
    }

    #[test]
    fn zero_innovation_leaves_mean() {
        let t = track_at(&state());
        let z = state().p;
        let up = ekf_update(&t, &z, &(Matrix3::identity() * 1e-12)).unwrap();
        assert_relative_eq!(up.mean, t.mean, epsilon = 1e-12);
    }

    #[test]
    fn uninformative_measurement_changes_nothing() {
        let t = track_at(&state());
        let z = Vector3::new(100.0, -50.0, 3.0);
        let up = ekf_update(&t, &z, &(Matrix3::identity() * 1e14)).unwrap();
        assert_relative_eq!(up.mean, t.mean, epsilon = 1e-9);
        assert_relative_eq!(up.cov, t.cov, epsilon = 1e-9);
    }

    #[test]
    fn singular_innovation_reported() {
        let mut t = track_at(&state());
        t.cov = Matrix6::zeros();
        assert_eq!(
            ekf_update(&t, &state().p, &Matrix3::zeros()),
            Err(EstimatorError::SingularInnovation)
        );
    }

    #[test]
    fn rising_shuttle_has_no_intercept() {
        let s = ShuttleState::new(Vector3::new(0.0, 0.0, 2.0), Vector3::new(0.0, 0.0, 10.0));
        assert!(predict_intercept(&track_at(&s), 1.55, 0.2, &AeroParams::default()).is_none());
    }

    #[test]
    fn falling_shuttle_intercept_in_future() {
        let s = ShuttleState::new(Vector3::new(1.0, 0.0, 3.0), Vector3::new(-3.0, 0.0, -2.0));
        let pred = predict_intercept(&track_at(&s), 1.55, 2.0, &AeroParams::default()).unwrap();
        assert!(pred.time_to_impact > 0.0);
        assert_relative_eq!(pred.target.p_star.z, 1.55);
        assert!(pred.target.p_star.x < 1.0);
    }

    #[test]
    fn tracker_rejects_out_of_order() {
        let mut tr = ShuttleTracker::new(EkfConfig::default(), AeroParams::default());
        tr.push(0.1, &Vector3::new(5.0, 0.0, 1.0)).unwrap();
        assert_eq!(
            tr.push(0.1, &Vector3::new(5.0, 0.0, 1.0)),
            Err(EstimatorError::OutOfOrder { t: 0.1, last: 0.1 })
        );
        assert!(tr.push(0.05, &Vector3::new(5.0, 0.0, 1.0)).is_err());
        assert_eq!(tr.updates(), 1);
        assert!(!tr.is_ready());
    }

    #[test]
    fn lead_grid_endpoints() {
        let g = default_lead_times();
        assert_eq!(g.len(), 20);
        assert_eq!(g[0], 1.0);
        assert_relative_eq!(g[19], 0.05, epsilon = 1e-15);
    }

    #[test]
    fn mean_std_sample_convention() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_relative_eq!(m, 2.0);
        assert_relative_eq!(s, 1.0);
        assert!(mean_std(&[]).0.is_nan());
    }
}

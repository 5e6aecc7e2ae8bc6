//! Training-corpus pipeline: random launches, hitting-zone filtering,
//! intercept targets, 50 Hz history windows and JSON-lines persistence.
//!
//! World frame: the receiving robot stands near the origin facing +x, the
//! launcher sits at positive x and fires towards -x. The hitting zone is
//! asymmetric in y because the racket is held in the right hand.

use std::io::{BufRead, Write};

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{self, AeroParams, DynamicsError, ShuttleState, StopCondition, Trajectory};
use crate::frame;
use crate::seeds;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid interval for {name}: [{lo}, {hi}]")]
    InvalidInterval { name: &'static str, lo: f64, hi: f64 },
    #[error("minimum traversal time must be non-negative, got {0}")]
    InvalidMinTime(f64),
    #[error("velocity too small to define an orientation (|v| = {0})")]
    DegenerateVelocity(f64),
    #[error("corpus size must be at least 1")]
    EmptyRequest,
    #[error("history rate {rate} Hz is not a whole multiple of the trajectory step {dt} s")]
    InvalidRate { rate: f64, dt: f64 },
    #[error("window length must be at least 1")]
    InvalidWindowLength,
    #[error("trajectory too short: a {len}-frame window needs {needed} samples, have {available}")]
    TrajectoryTooShort {
        len: usize,
        needed: usize,
        available: usize,
    },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("line {line}: {reason}")]
    InvalidRecord { line: usize, reason: String },
}

/// Closed interval `[lo, hi]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for Interval {
    fn from(a: [f64; 2]) -> Self {
        Self { lo: a[0], hi: a[1] }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    fn check(&self, name: &'static str) -> Result<(), CorpusError> {
        if self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi {
            Ok(())
        } else {
            Err(CorpusError::InvalidInterval {
                name,
                lo: self.lo,
                hi: self.hi,
            })
        }
    }

    /// Uniform draw; a zero-width interval returns `lo` exactly.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        if self.lo == self.hi {
            self.lo
        } else {
            self.lo + u * (self.hi - self.lo)
        }
    }
}

/// Uniform bounds for the launch state, per component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaunchRanges {
    pub px: Interval,
    pub py: Interval,
    pub pz: Interval,
    pub vx: Interval,
    pub vy: Interval,
    pub vz: Interval,
}

impl Default for LaunchRanges {
    fn default() -> Self {
        Self {
            px: Interval::new(5.0, 8.0),
            py: Interval::new(-2.0, 2.0),
            pz: Interval::new(-0.5, 2.5),
            vx: Interval::new(-25.0, -13.0),
            vy: Interval::new(-3.0, 3.0),
            vz: Interval::new(9.0, 18.0),
        }
    }
}

impl LaunchRanges {
    pub fn validate(&self) -> Result<(), CorpusError> {
        self.px.check("px")?;
        self.py.check("py")?;
        self.pz.check("pz")?;
        self.vx.check("vx")?;
        self.vy.check("vy")?;
        self.vz.check("vz")
    }

    /// Same state for every draw.
    pub fn fixed(state: &ShuttleState) -> Self {
        let i = |x: f64| Interval::new(x, x);
        Self {
            px: i(state.p.x),
            py: i(state.p.y),
            pz: i(state.p.z),
            vx: i(state.v.x),
            vy: i(state.v.y),
            vz: i(state.v.z),
        }
    }
}

/// Region the shuttle has to pass through to be hittable, plus the minimum
/// time from launch before it gets there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HitZone {
    pub x: Interval,
    pub y: Interval,
    pub z: Interval,
    pub t_min: f64,
}

impl Default for HitZone {
    fn default() -> Self {
        Self {
            x: Interval::new(-0.8, 0.8),
            y: Interval::new(-1.0, 0.2),
            z: Interval::new(1.5, 1.6),
            t_min: 0.8,
        }
    }
}

impl HitZone {
    pub fn validate(&self) -> Result<(), CorpusError> {
        self.x.check("zone.x")?;
        self.y.check("zone.y")?;
        self.z.check("zone.z")?;
        if !(self.t_min >= 0.0) {
            return Err(CorpusError::InvalidMinTime(self.t_min));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        self.x.contains(p.x) && self.y.contains(p.y) && self.z.contains(p.z)
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(self.x.mid(), self.y.mid(), self.z.mid())
    }
}

/// Intercept command: racket position, racket orientation and hit time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetTuple {
    pub p_star: Vector3<f64>,
    pub q_star: UnitQuaternion<f64>,
    /// Seconds on the clock of the trajectory it came from.
    pub t_star: f64,
}

impl TargetTuple {
    /// Racket face normal `n*`, the frame's -z axis.
    pub fn normal(&self) -> Vector3<f64> {
        frame::face_normal(&self.q_star)
    }
}

/// Crossing of the target plane, interpolated between samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneEntry {
    pub t: f64,
    pub state: ShuttleState,
}

pub fn sample_launch<R: Rng + ?Sized>(rng: &mut R, ranges: &LaunchRanges) -> ShuttleState {
    let p = Vector3::new(ranges.px.sample(rng), ranges.py.sample(rng), ranges.pz.sample(rng));
    let v = Vector3::new(ranges.vx.sample(rng), ranges.vy.sample(rng), ranges.vz.sample(rng));
    ShuttleState::new(p, v)
}

/// First downward crossing of the plane `z = z_target` that lies inside the
/// zone's x/y box at or after `zone.t_min`.
///
/// Position, velocity and time are linearly interpolated between the two
/// bracketing samples, so the returned state sits on the plane.
pub fn find_zone_entry(traj: &Trajectory, zone: &HitZone, z_target: f64) -> Option<ZoneEntry> {
    if !zone.z.contains(z_target) {
        return None;
    }
    traj.samples().windows(2).find_map(|w| {
        let (a, b) = (&w[0], &w[1]);
        if !(a.state.p.z >= z_target && b.state.p.z < z_target) {
            return None;
        }
        let s = (a.state.p.z - z_target) / (a.state.p.z - b.state.p.z);
        let t = a.t + s * (b.t - a.t);
        let mut p = a.state.p + (b.state.p - a.state.p) * s;
        p.z = z_target;
        let v = a.state.v + (b.state.v - a.state.v) * s;
        let inside = zone.x.contains(p.x) && zone.y.contains(p.y) && t >= zone.t_min;
        inside.then_some(ZoneEntry {
            t,
            state: ShuttleState::new(p, v),
        })
    })
}

/// Target tuple from a crossing state. The orientation's +z axis is the
/// flight direction; roll keeps the frame's y axis closest to world y.
pub fn target_from_entry(state: &ShuttleState, t_entry: f64, z_target: f64) -> Result<TargetTuple, CorpusError> {
    let speed = state.v.norm();
    if speed < 1e-6 {
        return Err(CorpusError::DegenerateVelocity(speed));
    }
    Ok(TargetTuple {
        p_star: Vector3::new(state.p.x, state.p.y, z_target),
        q_star: frame::frame_from_z(&state.v),
        t_star: t_entry,
    })
}

/// Shuttle positions at a fixed rate, newest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryWindow {
    pub t: f64,
    pub positions: Vec<[f64; 3]>,
}

impl HistoryWindow {
    /// Oldest first.
    pub fn reversed(&self) -> HistoryWindow {
        let mut positions = self.positions.clone();
        positions.reverse();
        HistoryWindow { t: self.t, positions }
    }
}

/// Sliding windows of `len` positions spaced `1/rate` apart, one per tick of
/// the `rate` clock once a full window fits.
pub fn history_windows(traj: &Trajectory, rate: f64, len: usize) -> Result<Vec<HistoryWindow>, CorpusError> {
    if len == 0 {
        return Err(CorpusError::InvalidWindowLength);
    }
    let ratio = 1.0 / (rate * traj.dt());
    let stride = ratio.round();
    if !(rate > 0.0) || stride < 1.0 || (ratio - stride).abs() > 1e-6 * ratio {
        return Err(CorpusError::InvalidRate { rate, dt: traj.dt() });
    }
    let stride = stride as usize;
    let samples = traj.samples();
    let needed = (len - 1) * stride + 1;
    if samples.len() < needed {
        return Err(CorpusError::TrajectoryTooShort {
            len,
            needed,
            available: samples.len(),
        });
    }
    Ok((needed - 1..samples.len())
        .step_by(stride)
        .map(|k| HistoryWindow {
            t: samples[k].t,
            positions: (0..len).map(|j| samples[k - j * stride].state.p.into()).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    pub rate_hz: f64,
    pub len: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { rate_hz: 50.0, len: 6 }
    }
}

/// Everything that determines a corpus besides its size and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub ranges: LaunchRanges,
    pub zone: HitZone,
    pub aero: AeroParams,
    pub dt: f64,
    /// Flights still airborne after this long are rejected.
    pub max_time: f64,
    /// Keep every n-th trajectory sample in the record; `None` drops them.
    pub store_trajectory: Option<usize>,
    pub windows: Option<WindowSpec>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            ranges: LaunchRanges::default(),
            zone: HitZone::default(),
            aero: AeroParams::default(),
            dt: dynamics::DEFAULT_DT,
            max_time: 3.0,
            store_trajectory: None,
            windows: None,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        self.ranges.validate()?;
        self.zone.validate()?;
        self.aero.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(DynamicsError::InvalidStep(self.dt).into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub seed: u64,
    pub index: u64,
    pub launch: ShuttleState,
    pub target: TargetTuple,
    pub traj: Option<Trajectory>,
    pub windows: Option<Vec<HistoryWindow>>,
}

impl CorpusRecord {
    /// Recompute the target from the launch state (or the stored trajectory
    /// when it was kept at full resolution).
    pub fn rederive_target(&self, config: &CorpusConfig) -> Result<Option<TargetTuple>, CorpusError> {
        let z_target = self.target.p_star.z;
        let traj = match &self.traj {
            Some(t) if (t.dt() - config.dt).abs() < 1e-15 => t.clone(),
            _ => flight(&self.launch, config)?,
        };
        find_zone_entry(&traj, &config.zone, z_target)
            .map(|e| target_from_entry(&e.state, e.t, z_target))
            .transpose()
    }

    /// The record's own flight, re-simulated from launch.
    pub fn flight(&self, config: &CorpusConfig) -> Result<Trajectory, CorpusError> {
        flight(&self.launch, config)
    }
}

fn flight(launch: &ShuttleState, config: &CorpusConfig) -> Result<Trajectory, CorpusError> {
    Ok(dynamics::simulate(
        launch,
        &config.aero,
        config.dt,
        StopCondition::ground(config.max_time),
    )?)
}

/// Fixed-width histogram of intercept times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub start: f64,
    pub width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(start: f64, width: f64, bins: usize) -> Self {
        Self {
            start,
            width,
            counts: vec![0; bins],
        }
    }

    /// Values outside the range are clamped into the edge bins.
    pub fn add(&mut self, x: f64) {
        let last = self.counts.len() - 1;
        let k = ((x - self.start) / self.width).floor();
        let k = if k < 0.0 { 0 } else { (k as usize).min(last) };
        self.counts[k] += 1;
    }

    pub fn bins(&self) -> impl Iterator<Item = (f64, f64, u64)> + '_ {
        self.counts.iter().enumerate().map(move |(k, &c)| {
            let lo = self.start + k as f64 * self.width;
            (lo, lo + self.width, c)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_total: u64,
    pub n_accepted: u64,
    /// Flights that neither landed nor stopped within `max_time`.
    pub n_non_terminating: u64,
    pub t_star_histogram: Histogram,
}

impl CorpusStats {
    pub fn acceptance_rate(&self) -> f64 {
        self.n_accepted as f64 / self.n_total as f64
    }

    /// CSV: `bin_start_s,bin_end_s,count` rows followed by a
    /// `n_total,n_accepted,rate` summary.
    pub fn write_csv<W: Write>(&self, mut w: W, header: &str) -> std::io::Result<()> {
        write_comment_header(&mut w, header)?;
        writeln!(w, "bin_start_s,bin_end_s,count")?;
        for (lo, hi, c) in self.t_star_histogram.bins() {
            writeln!(w, "{lo:.3},{hi:.3},{c}")?;
        }
        writeln!(w, "n_total,n_accepted,rate")?;
        writeln!(w, "{},{},{:.6}", self.n_total, self.n_accepted, self.acceptance_rate())
    }
}

/// `# ...` lines at the top of every CSV output.
pub fn write_comment_header<W: Write>(w: &mut W, header: &str) -> std::io::Result<()> {
    for line in header.lines() {
        writeln!(w, "{}", format!("# {line}").trim_end())?;
    }
    Ok(())
}

enum Outcome {
    Accepted(Box<CorpusRecord>),
    Rejected,
    NonTerminating,
}

fn generate_one(index: u64, seed: u64, config: &CorpusConfig) -> Result<Outcome, CorpusError> {
    let mut rng = seeds::substream(seed, seeds::CORPUS, index);
    let launch = sample_launch(&mut rng, &config.ranges);
    let z_target = config.zone.z.sample(&mut rng);
    let traj = match flight(&launch, config) {
        Ok(t) => t,
        Err(CorpusError::Dynamics(DynamicsError::NonTermination { .. })) => return Ok(Outcome::NonTerminating),
        Err(e) => return Err(e),
    };
    let Some(entry) = find_zone_entry(&traj, &config.zone, z_target) else {
        return Ok(Outcome::Rejected);
    };
    let target = target_from_entry(&entry.state, entry.t, z_target)?;
    let windows = match config.windows {
        Some(spec) => Some(history_windows(&traj, spec.rate_hz, spec.len)?),
        None => None,
    };
    let traj = config.store_trajectory.map(|stride| traj.decimate(stride));
    Ok(Outcome::Accepted(Box::new(CorpusRecord {
        seed,
        index,
        launch,
        target,
        traj,
        windows,
    })))
}

/// Simulate `n` random launches and keep those with a valid zone entry.
///
/// Record `i` draws from its own `(seed, i)` stream, so the result does not
/// depend on how the work is split across threads.
pub fn generate_corpus(
    n: u64,
    config: &CorpusConfig,
    seed: u64,
) -> Result<(Vec<CorpusRecord>, CorpusStats), CorpusError> {
    if n == 0 {
        return Err(CorpusError::EmptyRequest);
    }
    config.validate()?;
    let outcomes: Vec<Outcome> = (0..n)
        .into_par_iter()
        .map(|i| generate_one(i, seed, config))
        .collect::<Result<_, _>>()?;

    let mut stats = CorpusStats {
        n_total: n,
        n_accepted: 0,
        n_non_terminating: 0,
        t_star_histogram: Histogram::new(0.0, 0.05, (config.max_time / 0.05).ceil() as usize),
    };
    let mut records = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Accepted(r) => {
                stats.n_accepted += 1;
                stats.t_star_histogram.add(r.target.t_star);
                records.push(*r);
            }
            Outcome::Rejected => {}
            Outcome::NonTerminating => stats.n_non_terminating += 1,
        }
    }
    Ok((records, stats))
}

/// Draw launches in index order until `count` are accepted (or `max_draws`
/// is exhausted).
pub fn first_accepted(
    count: usize,
    config: &CorpusConfig,
    seed: u64,
    max_draws: u64,
) -> Result<Vec<CorpusRecord>, CorpusError> {
    config.validate()?;
    let mut out = Vec::with_capacity(count);
    let mut index = 0;
    while out.len() < count && index < max_draws {
        if let Outcome::Accepted(r) = generate_one(index, seed, config)? {
            out.push(*r);
        }
        index += 1;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// JSON-lines persistence

pub const CORPUS_FORMAT: &str = "shuttle-corpus/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusHeader {
    #[serde(rename = "type")]
    pub kind: String,
    pub format: String,
    pub units: String,
    pub quaternion_order: String,
    pub zone: HitZone,
    pub sim_dt: f64,
    /// Resolved run configuration, echoed verbatim.
    pub config: serde_json::Value,
}

impl CorpusHeader {
    pub fn new(zone: HitZone, sim_dt: f64, config: serde_json::Value) -> Self {
        Self {
            kind: "header".into(),
            format: CORPUS_FORMAT.into(),
            units: "SI (m, s, m/s)".into(),
            quaternion_order: "xyzw".into(),
            zone,
            sim_dt,
            config,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordLine {
    seed: u64,
    index: u64,
    p0: [f64; 3],
    v0: [f64; 3],
    t_star: f64,
    p_star: [f64; 3],
    q_star: [f64; 4],
    traj_dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    traj: Option<Vec<[f64; 7]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    windows: Option<Vec<HistoryWindow>>,
}

impl RecordLine {
    fn from_record(r: &CorpusRecord, sim_dt: f64) -> Self {
        Self {
            seed: r.seed,
            index: r.index,
            p0: r.launch.p.into(),
            v0: r.launch.v.into(),
            t_star: r.target.t_star,
            p_star: r.target.p_star.into(),
            q_star: frame::quat_to_xyzw(&r.target.q_star),
            traj_dt: r.traj.as_ref().map_or(sim_dt, |t| t.dt()),
            traj: r.traj.as_ref().map(|t| t.rows()),
            windows: r.windows.clone(),
        }
    }

    fn into_record(self) -> Result<CorpusRecord, DynamicsError> {
        let traj = match self.traj {
            Some(rows) => Some(Trajectory::from_rows(self.traj_dt, &rows)?),
            None => None,
        };
        Ok(CorpusRecord {
            seed: self.seed,
            index: self.index,
            launch: ShuttleState::new(self.p0.into(), self.v0.into()),
            target: TargetTuple {
                p_star: self.p_star.into(),
                q_star: frame::quat_from_xyzw(self.q_star),
                t_star: self.t_star,
            },
            traj,
            windows: self.windows,
        })
    }
}

pub fn write_corpus<W: Write>(mut w: W, header: &CorpusHeader, records: &[CorpusRecord]) -> Result<(), CorpusError> {
    serde_json::to_writer(&mut w, header).map_err(std::io::Error::from)?;
    writeln!(w)?;
    for r in records {
        serde_json::to_writer(&mut w, &RecordLine::from_record(r, header.sim_dt)).map_err(std::io::Error::from)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Load a corpus, re-checking that every target lies in the header's zone.
pub fn read_corpus<R: BufRead>(r: R) -> Result<(CorpusHeader, Vec<CorpusRecord>), CorpusError> {
    let mut lines = r.lines().enumerate();
    let header: CorpusHeader = loop {
        match lines.next() {
            None => {
                return Err(CorpusError::InvalidRecord {
                    line: 1,
                    reason: "missing header".into(),
                })
            }
            Some((_, line)) if line.as_ref().is_ok_and(|l| l.trim().is_empty()) => continue,
            Some((i, line)) => {
                break serde_json::from_str(&line?).map_err(|source| CorpusError::Parse { line: i + 1, source })?
            }
        }
    };
    let zone = header.zone;
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 1;
        let raw: RecordLine = serde_json::from_str(&line).map_err(|source| CorpusError::Parse { line: n, source })?;
        let record = raw.into_record().map_err(|e| CorpusError::InvalidRecord {
            line: n,
            reason: e.to_string(),
        })?;
        let t = &record.target;
        if !(zone.x.contains(t.p_star.x) && zone.y.contains(t.p_star.y) && zone.z.contains(t.p_star.z)) {
            return Err(CorpusError::InvalidRecord {
                line: n,
                reason: format!("p_star {:?} outside hitting zone", t.p_star.as_slice()),
            });
        }
        if t.t_star < zone.t_min {
            return Err(CorpusError::InvalidRecord {
                line: n,
                reason: format!("t_star {} below minimum {}", t.t_star, zone.t_min),
            });
        }
        records.push(record);
    }
    Ok((header, records))
}

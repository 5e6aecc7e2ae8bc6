//! Live prediction service: timestamped positions in, intercept targets out.
//!
//! The wire format is newline-delimited JSON. Inbound lines carry a `type`
//! of `meas`, `close`, `plane` (intercept height for a track) or `truth`
//! (ground truth embedded in replay files, ignored by the filter). Outbound
//! lines are `target` messages and `error` notices.
//!
//! Each track owns a tracker and a small reorder buffer. Measurements leave
//! the buffer in time order once it holds more than `reorder_depth` frames.
//! Targets are published on the sender clock: the message for tick `k` is
//! produced once a measurement later than `k / rate_hz` is consumed, so it
//! reflects exactly the measurements stamped at or before the tick. Nothing
//! depends on wall-clock arrival time.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::AeroParams;
use crate::estimator::{EkfConfig, EvalReport, Fix, InterceptPrediction, LeadError, ShuttleTracker};
use crate::frame;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("stale measurement on track {track}: t = {t} is not after consumed horizon {horizon}")]
    StaleMeasurement { track: u64, t: f64, horizon: f64 },
    #[error("invalid measurement on track {track}: {reason}")]
    InvalidMeasurement { track: u64, reason: &'static str },
    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("invalid stream config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub t: f64,
    pub p: Vector3<f64>,
    pub track_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Inbound {
    Meas {
        track: u64,
        t: f64,
        p: [f64; 3],
    },
    Close {
        track: u64,
    },
    Plane {
        track: u64,
        z: f64,
    },
    Truth {
        track: u64,
        t_star: f64,
        p_star: [f64; 3],
    },
    /// File or session preamble; ignored.
    Header {
        #[serde(flatten)]
        rest: serde_json::Map<String, serde_json::Value>,
    },
}

/// Published target. Prediction fields are `null` while `valid` is false.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetMessage {
    pub track: u64,
    pub seq: u64,
    pub valid: bool,
    pub p_star: Option<[f64; 3]>,
    /// xyzw
    pub q_star: Option<[f64; 4]>,
    pub t_star: Option<f64>,
    /// `t_star` minus the tick time, s.
    pub tti: Option<f64>,
    /// Tick time on the sender clock; recoverable from the prediction
    /// fields, so not sent.
    #[serde(skip)]
    pub tick: f64,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Outbound<'a> {
    Target(&'a TargetMessage),
    Error { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub rate_hz: f64,
    pub reorder_depth: usize,
    pub ekf: EkfConfig,
    pub aero: AeroParams,
    /// Intercept height for tracks without a `plane` message, m.
    pub z_target: f64,
    /// Rollout horizon for predictions, s.
    pub horizon: f64,
    /// Sender-clock silence after which a track is closed, s.
    pub silence_timeout: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            rate_hz: 50.0,
            reorder_depth: 3,
            ekf: EkfConfig::default(),
            aero: AeroParams::default(),
            z_target: 1.55,
            horizon: 3.0,
            silence_timeout: 2.0,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<(), StreamError> {
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(StreamError::InvalidConfig("rate_hz must be positive"));
        }
        if !(self.horizon > 0.0) {
            return Err(StreamError::InvalidConfig("horizon must be positive"));
        }
        if !(self.silence_timeout > 0.0) {
            return Err(StreamError::InvalidConfig("silence_timeout must be positive"));
        }
        if !self.z_target.is_finite() {
            return Err(StreamError::InvalidConfig("z_target must be finite"));
        }
        self.aero
            .validate()
            .map_err(|_| StreamError::InvalidConfig("invalid aero parameters"))
    }
}

/// Why a track ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloseReason {
    Ground,
    Explicit,
    Silence,
    EndOfStream,
}

/// Tracker state after each consumed measurement.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub tracker: ShuttleTracker,
}

#[derive(Debug, Clone)]
pub struct TrackReport {
    pub track: u64,
    pub reason: CloseReason,
    pub consumed: usize,
    pub drops: usize,
    /// Measurements the filter rejected (numerical failure).
    pub rejected: usize,
    pub messages: usize,
    pub z_target: f64,
    pub last_message: Option<TargetMessage>,
    /// Empty unless the session keeps history.
    pub history: Vec<Snapshot>,
}

impl TrackReport {
    /// Prediction from the state after all measurements stamped at or before
    /// `t`, at this track's intercept height.
    pub fn prediction_at(&self, t: f64, horizon: f64) -> Option<InterceptPrediction> {
        let idx = self.history.partition_point(|s| s.t <= t + 1e-12);
        self.history[..idx].last()?.tracker.predict(self.z_target, horizon)
    }
}

struct Track {
    id: u64,
    tracker: ShuttleTracker,
    buffer: Vec<Measurement>,
    horizon: Option<f64>,
    next_tick: i64,
    last_seen: f64,
    z_target: f64,
    consumed: usize,
    drops: usize,
    rejected: usize,
    messages: usize,
    last_message: Option<TargetMessage>,
    history: Vec<Snapshot>,
}

/// One client's tracks. Single-threaded; a server runs one per connection.
pub struct Session {
    config: StreamConfig,
    keep_history: bool,
    tracks: BTreeMap<u64, Track>,
    planes: HashMap<u64, f64>,
    seqs: HashMap<u64, u64>,
    finished: Vec<TrackReport>,
    /// Last sender time seen on recently closed tracks.
    closed: HashMap<u64, f64>,
    clock: f64,
    drops: usize,
    ignored: usize,
}

impl Session {
    pub fn new(config: StreamConfig) -> Result<Self, StreamError> {
        config.validate()?;
        Ok(Self {
            config,
            keep_history: false,
            tracks: BTreeMap::new(),
            planes: HashMap::new(),
            seqs: HashMap::new(),
            finished: Vec::new(),
            closed: HashMap::new(),
            clock: f64::NEG_INFINITY,
            drops: 0,
            ignored: 0,
        })
    }

    /// Record a tracker snapshot after every consumed measurement, for
    /// scoring against ground truth afterwards.
    pub fn keep_history(&mut self, on: bool) {
        self.keep_history = on;
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }

    pub fn drops(&self) -> usize {
        self.drops
    }

    /// Measurements that arrived for a track after it closed. A track id
    /// silent for longer than the timeout starts a new flight instead.
    pub fn ignored(&self) -> usize {
        self.ignored
    }

    pub fn open_tracks(&self) -> impl Iterator<Item = u64> + '_ {
        self.tracks.keys().copied()
    }

    pub fn finished(&self) -> &[TrackReport] {
        &self.finished
    }

    pub fn take_finished(&mut self) -> Vec<TrackReport> {
        std::mem::take(&mut self.finished)
    }

    /// Intercept height for a track, current or future.
    pub fn set_plane(&mut self, track: u64, z: f64) {
        self.planes.insert(track, z);
        if let Some(tr) = self.tracks.get_mut(&track) {
            tr.z_target = z;
        }
    }

    pub fn handle(&mut self, msg: &Inbound) -> Result<Vec<TargetMessage>, StreamError> {
        match *msg {
            Inbound::Meas { track, t, p } => self.ingest(Measurement {
                t,
                p: Vector3::from(p),
                track_id: track,
            }),
            Inbound::Close { track } => Ok(self.close(track, CloseReason::Explicit)),
            Inbound::Plane { track, z } => {
                self.set_plane(track, z);
                Ok(Vec::new())
            }
            Inbound::Truth { .. } | Inbound::Header { .. } => Ok(Vec::new()),
        }
    }

    /// Buffer a measurement, consuming whatever the reorder window releases.
    /// Returns the target messages whose ticks were passed.
    pub fn ingest(&mut self, m: Measurement) -> Result<Vec<TargetMessage>, StreamError> {
        let id = m.track_id;
        if !(m.t.is_finite() && m.p.iter().all(|c| c.is_finite())) {
            return Err(StreamError::InvalidMeasurement {
                track: id,
                reason: "non-finite value",
            });
        }
        if m.t < 0.0 {
            return Err(StreamError::InvalidMeasurement {
                track: id,
                reason: "negative time",
            });
        }
        let mut out = Vec::new();
        self.clock = self.clock.max(m.t);
        let timeout = self.config.silence_timeout;
        let silent: Vec<u64> = self
            .tracks
            .values()
            .filter(|tr| self.clock - tr.last_seen > timeout)
            .map(|tr| tr.id)
            .collect();
        for track in silent {
            out.extend(self.close(track, CloseReason::Silence));
        }

        if let Some(last) = self.closed.get_mut(&id) {
            if m.t - *last <= timeout {
                *last = last.max(m.t);
                self.ignored += 1;
                return Ok(out);
            }
            self.closed.remove(&id);
        }

        let z_default = self.planes.get(&id).copied().unwrap_or(self.config.z_target);
        let (config, keep) = (&self.config, self.keep_history);
        let tr = self.tracks.entry(id).or_insert_with(|| Track {
            id,
            tracker: ShuttleTracker::new(config.ekf, config.aero),
            buffer: Vec::new(),
            horizon: None,
            next_tick: 0,
            last_seen: m.t,
            z_target: z_default,
            consumed: 0,
            drops: 0,
            rejected: 0,
            messages: 0,
            last_message: None,
            history: Vec::new(),
        });
        let duplicate = tr.buffer.iter().any(|b| b.t == m.t);
        if let Some(h) = tr.horizon.filter(|&h| m.t <= h).or(duplicate.then_some(m.t)) {
            tr.drops += 1;
            self.drops += 1;
            return Err(StreamError::StaleMeasurement {
                track: id,
                t: m.t,
                horizon: h,
            });
        }
        tr.last_seen = tr.last_seen.max(m.t);
        let pos = tr.buffer.partition_point(|b| b.t < m.t);
        tr.buffer.insert(pos, m);
        let seq = self.seqs.entry(id).or_insert(0);
        let mut ground = false;
        while tr.buffer.len() > self.config.reorder_depth {
            let next = tr.buffer.remove(0);
            ground |= consume(tr, next, &self.config, keep, seq, &mut out);
            if ground {
                break;
            }
        }
        if ground {
            out.extend(self.close(id, CloseReason::Ground));
        }
        Ok(out)
    }

    /// Drain a track's buffer, publish its final tick and retire it.
    pub fn close(&mut self, track: u64, reason: CloseReason) -> Vec<TargetMessage> {
        let mut out = Vec::new();
        let Some(mut tr) = self.tracks.remove(&track) else {
            return out;
        };
        let seq = self.seqs.entry(track).or_insert(0);
        for m in std::mem::take(&mut tr.buffer) {
            if consume(&mut tr, m, &self.config, self.keep_history, seq, &mut out) {
                break;
            }
        }
        if tr.horizon.is_some() {
            let tick = tr.next_tick as f64 / self.config.rate_hz;
            let msg = target_message(&tr, tick, &self.config, seq);
            tr.messages += 1;
            tr.last_message = Some(msg);
            out.push(msg);
        }
        self.closed.insert(track, tr.last_seen);
        debug!("track {track} closed ({reason:?}) after {} measurements", tr.consumed);
        self.finished.push(TrackReport {
            track,
            reason,
            consumed: tr.consumed,
            drops: tr.drops,
            rejected: tr.rejected,
            messages: tr.messages,
            z_target: tr.z_target,
            last_message: tr.last_message,
            history: tr.history,
        });
        out
    }

    /// Close every open track.
    pub fn flush(&mut self) -> Vec<TargetMessage> {
        let ids: Vec<u64> = self.tracks.keys().copied().collect();
        ids.into_iter()
            .flat_map(|id| self.close(id, CloseReason::EndOfStream))
            .collect()
    }

    /// Out-of-schedule message with the track's current state; `valid` is
    /// false for unknown or uninitialized tracks.
    pub fn poll(&mut self, track: u64) -> TargetMessage {
        let seq = self.seqs.entry(track).or_insert(0);
        match self.tracks.get_mut(&track) {
            Some(tr) => {
                let tick = tr.horizon.unwrap_or(0.0);
                let msg = target_message(tr, tick, &self.config, seq);
                tr.messages += 1;
                tr.last_message = Some(msg);
                msg
            }
            None => {
                *seq += 1;
                invalid_message(track, *seq, 0.0)
            }
        }
    }
}

fn invalid_message(track: u64, seq: u64, tick: f64) -> TargetMessage {
    TargetMessage {
        track,
        seq,
        valid: false,
        p_star: None,
        q_star: None,
        t_star: None,
        tti: None,
        tick,
    }
}

fn target_message(tr: &Track, tick: f64, config: &StreamConfig, seq: &mut u64) -> TargetMessage {
    *seq += 1;
    match tr.tracker.predict(tr.z_target, config.horizon) {
        Some(pred) => TargetMessage {
            track: tr.id,
            seq: *seq,
            valid: true,
            p_star: Some(pred.target.p_star.into()),
            q_star: Some(frame::quat_to_xyzw(&pred.target.q_star)),
            t_star: Some(pred.target.t_star),
            tti: Some(pred.target.t_star - tick),
            tick,
        },
        None => invalid_message(tr.id, *seq, tick),
    }
}

/// Publish the ticks `m` passes, then fold it into the filter. Returns true
/// when the filtered shuttle is at or below the floor and falling.
fn consume(
    tr: &mut Track,
    m: Measurement,
    config: &StreamConfig,
    keep: bool,
    seq: &mut u64,
    out: &mut Vec<TargetMessage>,
) -> bool {
    let rate = config.rate_hz;
    if tr.horizon.is_some() {
        loop {
            let tick = tr.next_tick as f64 / rate;
            if tick >= m.t {
                break;
            }
            let msg = target_message(tr, tick, config, seq);
            tr.messages += 1;
            tr.last_message = Some(msg);
            out.push(msg);
            tr.next_tick += 1;
        }
    } else {
        tr.next_tick = (m.t * rate).ceil() as i64;
    }
    tr.horizon = Some(m.t);
    if let Err(e) = tr.tracker.push(m.t, &m.p) {
        warn!("track {}: measurement at t = {} rejected: {e}", tr.id, m.t);
        tr.rejected += 1;
        return false;
    }
    tr.consumed += 1;
    if keep {
        tr.history.push(Snapshot {
            t: m.t,
            tracker: tr.tracker.clone(),
        });
    }
    tr.tracker.is_ready() && tr.tracker.track().is_some_and(|k| k.mean[2] <= 0.0 && k.mean[5] < 0.0)
}

fn parse_line(line: &str, number: usize) -> Result<Option<Inbound>, StreamError> {
    if line.trim().is_empty() {
        return Ok(None);
    }
    serde_json::from_str(line)
        .map(Some)
        .map_err(|e| StreamError::MalformedLine {
            line: number,
            reason: e.to_string(),
        })
}

#[derive(Debug, Clone)]
pub struct ReplaySummary {
    pub tracks: usize,
    pub measurements: usize,
    pub drops: usize,
    pub messages: usize,
    pub final_messages: Vec<TargetMessage>,
    /// Errors against embedded ground truth, tracks in id order; `None` when
    /// the file carries no `truth` lines.
    pub report: Option<EvalReport>,
}

/// Feed a measurement file through `session`, sleeping so that sender-clock
/// time advances at `speed` times real time (`f64::INFINITY` for no pacing).
/// Every emitted message goes to `sink`. Ground truth lines are scored at
/// `lead_times` before the true intercept.
pub fn replay<R: BufRead>(
    reader: R,
    speed: f64,
    session: &mut Session,
    lead_times: &[f64],
    mut sink: impl FnMut(&TargetMessage),
) -> Result<ReplaySummary, StreamError> {
    if !(speed > 0.0) {
        return Err(StreamError::InvalidConfig("replay speed must be positive"));
    }
    session.keep_history(true);
    let start = Instant::now();
    let mut t_ref: Option<f64> = None;
    let mut truths: BTreeMap<u64, (f64, Vector3<f64>)> = BTreeMap::new();
    let mut measurements = 0;
    let mut messages = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let Some(msg) = parse_line(&line, i + 1)? else {
            continue;
        };
        match &msg {
            Inbound::Truth { track, t_star, p_star } => {
                truths.insert(*track, (*t_star, Vector3::from(*p_star)));
            }
            Inbound::Meas { t, .. } => {
                measurements += 1;
                if speed.is_finite() {
                    let t0 = *t_ref.get_or_insert(*t);
                    let due = Duration::from_secs_f64(((t - t0) / speed).max(0.0));
                    if let Some(wait) = due.checked_sub(start.elapsed()) {
                        thread::sleep(wait);
                    }
                }
            }
            _ => {}
        }
        match session.handle(&msg) {
            Ok(out) => {
                messages += out.len();
                out.iter().for_each(&mut sink);
            }
            Err(StreamError::StaleMeasurement { .. }) => {}
            Err(StreamError::InvalidMeasurement { reason, .. }) => {
                return Err(StreamError::MalformedLine {
                    line: i + 1,
                    reason: reason.to_string(),
                })
            }
            Err(e) => return Err(e),
        }
    }
    let out = session.flush();
    messages += out.len();
    out.iter().for_each(&mut sink);

    let reports = session.take_finished();
    let horizon = session.config().horizon;
    let mut by_track: BTreeMap<u64, &TrackReport> = BTreeMap::new();
    for r in &reports {
        // a reused id keeps its first flight
        by_track.entry(r.track).or_insert(r);
    }
    let report = (!truths.is_empty()).then(|| {
        let per_flight = truths
            .iter()
            .map(|(id, &(t_star, p_star))| {
                lead_times
                    .iter()
                    .map(|&lead| {
                        let pred = by_track.get(id)?.prediction_at(t_star - lead, horizon)?;
                        Some(LeadError {
                            lead_time: lead,
                            pos_err: (pred.target.p_star - p_star).norm(),
                            t_err: (pred.target.t_star - t_star).abs(),
                        })
                    })
                    .collect()
            })
            .collect();
        EvalReport::from_per_flight(lead_times, per_flight)
    });
    let mut final_messages: Vec<TargetMessage> = reports.iter().filter_map(|r| r.last_message).collect();
    final_messages.sort_by_key(|m| (m.track, m.seq));
    Ok(ReplaySummary {
        tracks: reports.len(),
        measurements,
        drops: session.drops(),
        messages,
        final_messages,
        report,
    })
}

/// Write one flight as replay lines: intercept plane, optional truth, then
/// the fixes. All times are shifted by `t_offset`; flights sharing a file
/// share the sender clock, so later flights should start after earlier ones.
pub fn write_flight<W: Write>(
    mut w: W,
    track: u64,
    fixes: &[Fix],
    z_target: f64,
    truth: Option<(f64, Vector3<f64>)>,
    t_offset: f64,
) -> std::io::Result<()> {
    let mut line = |msg: &Inbound| -> std::io::Result<()> {
        serde_json::to_writer(&mut w, msg)?;
        writeln!(w)
    };
    line(&Inbound::Plane { track, z: z_target })?;
    if let Some((t_star, p_star)) = truth {
        line(&Inbound::Truth {
            track,
            t_star: t_star + t_offset,
            p_star: p_star.into(),
        })?;
    }
    for f in fixes {
        line(&Inbound::Meas {
            track,
            t: f.t + t_offset,
            p: f.p.into(),
        })?;
    }
    Ok(())
}

pub fn write_target<W: Write>(mut w: W, msg: &TargetMessage) -> std::io::Result<()> {
    serde_json::to_writer(&mut w, &Outbound::Target(msg))?;
    writeln!(w)
}

fn write_error<W: Write>(mut w: W, line: usize, message: String) -> std::io::Result<()> {
    serde_json::to_writer(&mut w, &Outbound::Error { line, message })?;
    writeln!(w)
}

/// Accept connections until `shutdown` is set. Each connection gets its own
/// session and thread; open connections are closed on shutdown.
pub fn serve(listener: TcpListener, config: StreamConfig, shutdown: Arc<AtomicBool>) -> Result<(), StreamError> {
    config.validate()?;
    listener.set_nonblocking(true)?;
    let mut workers = Vec::new();
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                info!("connection from {peer}");
                let config = config.clone();
                let shutdown = Arc::clone(&shutdown);
                workers.push(thread::spawn(move || {
                    if let Err(e) = handle_connection(stream, config, &shutdown) {
                        warn!("connection {peer}: {e}");
                    }
                }));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(20)),
            Err(e) => return Err(e.into()),
        }
        workers.retain(|h| !h.is_finished());
    }
    for h in workers {
        let _ = h.join();
    }
    Ok(())
}

fn handle_connection(stream: TcpStream, config: StreamConfig, shutdown: &AtomicBool) -> Result<(), StreamError> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_millis(100)))?;
    let mut writer = std::io::BufWriter::new(stream.try_clone()?);
    let mut reader = BufReader::new(stream);
    let mut session = Session::new(config)?;
    let mut buf = Vec::new();
    let mut number = 0;
    loop {
        if shutdown.load(Ordering::SeqCst) {
            break;
        }
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => break,
            Ok(_) if buf.ends_with(b"\n") => {}
            Ok(_) => continue,
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => continue,
            Err(e) => return Err(e.into()),
        }
        number += 1;
        let line = String::from_utf8_lossy(&buf).into_owned();
        buf.clear();
        let result = parse_line(&line, number).and_then(|m| match m {
            Some(m) => session.handle(&m),
            None => Ok(Vec::new()),
        });
        match result {
            Ok(out) => {
                for m in &out {
                    write_target(&mut writer, m)?;
                }
            }
            Err(e) => write_error(&mut writer, number, e.to_string())?,
        }
        writer.flush()?;
    }
    for m in &session.flush() {
        write_target(&mut writer, m)?;
    }
    writer.flush()?;
    Ok(())
}

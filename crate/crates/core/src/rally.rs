//! Two-sided rally on a scaled court with parametric hitters standing in for
//! the trained policy.
//!
//! The net is the plane `x = 0`. Side A occupies the `-x` half and faces +x,
//! side B the `+x` half and faces -x; each hitter stands at the middle of its
//! half. Every hitter sees the shuttle in its own frame (facing +x, right
//! hand at -y), which is the frame the hitting zone is defined in.
//!
//! Falls cannot happen without a robot model, so a rally ends on a net fault,
//! an out-of-bounds landing, a missed interception, or after `max_hits`
//! successful returns.

use std::io::Write;

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contact::{self, HitQuality, HitThresholds, RacketState};
use crate::corpus::{self, HitZone, LaunchRanges, TargetTuple};
use crate::dynamics::{self, AeroParams, Sample, ShuttleState, StopCondition, Trajectory};
use crate::frame;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CourtSpec {
    pub half_length: f64,
    pub half_width: f64,
    pub net_height: f64,
}

impl Default for CourtSpec {
    fn default() -> Self {
        Self {
            half_length: 4.0,
            half_width: 1.75,
            net_height: 1.524,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }

    /// Hitter's home position on the floor.
    pub fn home_x(self, court: &CourtSpec) -> f64 {
        match self {
            Side::A => -0.5 * court.half_length,
            Side::B => 0.5 * court.half_length,
        }
    }

    fn heading(self) -> f64 {
        match self {
            Side::A => 1.0,
            Side::B => -1.0,
        }
    }

    pub fn point_to_local(self, court: &CourtSpec, p: &Vector3<f64>) -> Vector3<f64> {
        let s = self.heading();
        Vector3::new(s * (p.x - self.home_x(court)), s * p.y, p.z)
    }

    pub fn point_to_world(self, court: &CourtSpec, p: &Vector3<f64>) -> Vector3<f64> {
        let s = self.heading();
        Vector3::new(s * p.x + self.home_x(court), s * p.y, p.z)
    }

    pub fn vector_to_local(self, v: &Vector3<f64>) -> Vector3<f64> {
        let s = self.heading();
        Vector3::new(s * v.x, s * v.y, v.z)
    }

    pub fn vector_to_world(self, v: &Vector3<f64>) -> Vector3<f64> {
        // the map is its own inverse
        self.vector_to_local(v)
    }

    pub fn rotation_to_world(self) -> UnitQuaternion<f64> {
        match self {
            Side::A => UnitQuaternion::identity(),
            Side::B => UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::PI),
        }
    }

    pub fn state_to_local(self, court: &CourtSpec, s: &ShuttleState) -> ShuttleState {
        ShuttleState::new(self.point_to_local(court, &s.p), self.vector_to_local(&s.v))
    }

    pub fn state_to_world(self, court: &CourtSpec, s: &ShuttleState) -> ShuttleState {
        ShuttleState::new(self.point_to_world(court, &s.p), self.vector_to_world(&s.v))
    }
}

/// How a hitter chooses the racket normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AimPolicy {
    /// Normal against the incoming direction: the shuttle goes back where it
    /// came from.
    StraightBack,
    /// Normal chosen so the return crosses the hitting height at the centre
    /// of the opponent's hitting zone.
    OppositeZone,
}

/// Ideal return corrupted by Gaussian pose and timing errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleHitter {
    pub pos_sigma: f64,
    pub ori_sigma: f64,
    pub timing_sigma: f64,
    pub swing_speed: f64,
    pub aim: AimPolicy,
}

impl Default for OracleHitter {
    fn default() -> Self {
        Self {
            pos_sigma: 0.0,
            ori_sigma: 0.0,
            timing_sigma: 0.0,
            swing_speed: 8.0,
            aim: AimPolicy::OppositeZone,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RallyConfig {
    pub court: CourtSpec,
    /// Hitting zone in each hitter's own frame; `t_min` counts from the
    /// start of the incoming flight.
    pub zone: HitZone,
    pub aero: AeroParams,
    pub dt: f64,
    pub thresholds: HitThresholds,
    pub max_hits: usize,
    /// Longest flight simulated before giving up, s.
    pub max_flight_time: f64,
    /// Serve launch distribution, in side A's frame.
    pub serve_ranges: LaunchRanges,
}

impl Default for RallyConfig {
    fn default() -> Self {
        Self {
            court: CourtSpec::default(),
            zone: HitZone::default(),
            aero: AeroParams::default(),
            dt: dynamics::DEFAULT_DT,
            thresholds: HitThresholds::default(),
            max_hits: 21,
            max_flight_time: 10.0,
            serve_ranges: LaunchRanges::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    NetFault,
    OutOfBounds,
    MissGroundContact,
    MaxHitsReached,
}

/// One interception attempt, in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitEvent {
    pub side: Side,
    /// Rally clock at contact, s.
    pub t: f64,
    /// Shuttle state at contact.
    pub incoming: ShuttleState,
    pub racket: RacketState,
    pub quality: HitQuality,
    pub success: bool,
    /// Outgoing velocity; present only for successful hits.
    pub v_out: Option<Vector3<f64>>,
    pub net_clear: Option<bool>,
    pub landing: Option<[f64; 2]>,
    pub in_bounds: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RallyOutcome {
    pub hits: Vec<HitEvent>,
    pub length: usize,
    pub termination: Termination,
    /// Serve first, then every return, world frame, rally clock.
    pub flights: Vec<Trajectory>,
}

/// Interpolated height where the flight first crosses the net plane is
/// strictly above the net. A flight that never crosses is reported clear;
/// the landing check catches it.
pub fn check_net_clearance(traj: &Trajectory, court: &CourtSpec) -> bool {
    net_crossing_height(traj).is_none_or(|z| z > court.net_height)
}

fn net_crossing_height(traj: &Trajectory) -> Option<f64> {
    traj.samples().windows(2).find_map(|w| {
        let (a, b) = (&w[0].state.p, &w[1].state.p);
        if a.x != 0.0 && a.x * b.x <= 0.0 {
            let s = a.x / (a.x - b.x);
            Some(a.z + s * (b.z - a.z))
        } else {
            None
        }
    })
}

/// Landing point inside the receiving half, lines included.
pub fn check_in_bounds(landing: [f64; 2], court: &CourtSpec, receiving: Side) -> bool {
    let [x, y] = landing;
    let depth_ok = match receiving {
        Side::A => (-court.half_length..=0.0).contains(&x),
        Side::B => (0.0..=court.half_length).contains(&x),
    };
    depth_ok && y.abs() <= court.half_width
}

fn flight_from(state: &ShuttleState, t0: f64, config: &RallyConfig) -> Option<Trajectory> {
    dynamics::simulate_from(
        state,
        t0,
        &config.aero,
        config.dt,
        StopCondition::ground(config.max_flight_time),
    )
    .ok()
}

/// First descending crossing of height `z` after `state`, horizontal point.
fn crossing_at_height(state: &ShuttleState, z: f64, config: &RallyConfig) -> Option<Vector3<f64>> {
    let mut cur = *state;
    let steps = (config.max_flight_time / config.dt).ceil() as usize;
    for _ in 0..steps {
        let next = dynamics::step(&cur, config.dt, &config.aero).ok()?;
        if cur.p.z >= z && next.p.z < z {
            let s = (cur.p.z - z) / (cur.p.z - next.p.z);
            return Some(cur.p + (next.p - cur.p) * s);
        }
        if next.p.z < 0.0 {
            return None;
        }
        cur = next;
    }
    None
}

fn direction(yaw: f64, pitch: f64) -> Vector3<f64> {
    Vector3::new(pitch.cos() * yaw.cos(), pitch.cos() * yaw.sin(), pitch.sin())
}

/// Racket normal (world frame) whose return, hit at `contact` with a racket
/// moving at `swing_speed` along the normal, crosses `aim.z` within about
/// 1 cm of `aim`. Pitch is bisected on the lob branch of the range curve;
/// yaw is corrected for sideways drift in an outer loop.
pub fn aim_normal(contact: &ShuttleState, aim: &Vector3<f64>, swing_speed: f64, config: &RallyConfig) -> Vector3<f64> {
    let d = aim - contact.p;
    let target_range = (d.x * d.x + d.y * d.y).sqrt();
    let mut yaw = d.y.atan2(d.x);
    let base_yaw = yaw;
    let mut best = direction(yaw, std::f64::consts::FRAC_PI_4);

    // signed progress of a return along the aim direction
    let range_of = |yaw: f64, pitch: f64| -> Option<(f64, f64)> {
        let n = direction(yaw, pitch);
        let v_out = contact::reflect(&contact.v, &(n * swing_speed), &n).ok()?;
        let hit = crossing_at_height(&ShuttleState::new(contact.p, v_out), aim.z, config)?;
        let h = hit - contact.p;
        let along = h.x * base_yaw.cos() + h.y * base_yaw.sin();
        let across = -h.x * base_yaw.sin() + h.y * base_yaw.cos();
        Some((along, across))
    };

    for _ in 0..6 {
        // coarse scan for the longest return; lobs live above it
        let mut peak = (f64::NEG_INFINITY, 0.0);
        for k in 1..=34 {
            let pitch = (k as f64 * 2.5).to_radians();
            if let Some((along, _)) = range_of(yaw, pitch) {
                if along > peak.0 {
                    peak = (along, pitch);
                }
            }
        }
        if !peak.0.is_finite() {
            return best;
        }
        let mut lo = peak.1;
        let mut hi = 88f64.to_radians();
        let mut pitch = lo;
        if peak.0 > target_range {
            for _ in 0..60 {
                pitch = 0.5 * (lo + hi);
                match range_of(yaw, pitch) {
                    Some((along, _)) if along > target_range => lo = pitch,
                    _ => hi = pitch,
                }
                if hi - lo < 1e-9 {
                    break;
                }
            }
        }
        best = direction(yaw, pitch);
        let Some((along, across)) = range_of(yaw, pitch) else {
            return best;
        };
        if (along - target_range).abs() < 0.01 && across.abs() < 0.01 {
            return best;
        }
        yaw -= (across / along.max(0.1)).atan();
    }
    best
}

/// Where an ideal return should cross the hitting height: the centre of the
/// receiving hitter's zone.
pub fn aim_point(receiving: Side, config: &RallyConfig) -> Vector3<f64> {
    receiving.point_to_world(&config.court, &config.zone.center())
}

fn perturbation<R: Rng + ?Sized>(rng: &mut R, hitter: &OracleHitter) -> (Vector3<f64>, f64, f64, f64) {
    let dp = Vector3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    ) * hitter.pos_sigma;
    let tilt = Normal::new(0.0, hitter.ori_sigma.max(0.0)).map_or(0.0, |n| n.sample(rng));
    let tilt_axis_angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let dt = Normal::new(0.0, hitter.timing_sigma.max(0.0)).map_or(0.0, |n| n.sample(rng));
    (dp, tilt, tilt_axis_angle, dt)
}

/// Try to return `incoming` (world frame). `None` when the flight never
/// enters the hitter's zone; otherwise the attempt, successful or not.
pub fn attempt_return<R: Rng + ?Sized>(
    incoming: &Trajectory,
    side: Side,
    hitter: &OracleHitter,
    config: &RallyConfig,
    rng: &mut R,
) -> Option<HitEvent> {
    let court = &config.court;
    let t0 = incoming.start_time();
    let local_samples: Vec<Sample> = incoming
        .samples()
        .iter()
        .map(|s| Sample {
            t: s.t - t0,
            state: side.state_to_local(court, &s.state),
        })
        .collect();
    let local = Trajectory::new(incoming.dt(), local_samples).ok()?;
    let z_target = config.zone.z.sample(rng);
    let (dp, tilt, tilt_dir, dt) = perturbation(rng, hitter);

    let entry = corpus::find_zone_entry(&local, &config.zone, z_target)?;
    let ideal = corpus::target_from_entry(&entry.state, entry.t, z_target).ok()?;

    // shuttle at the (possibly mistimed) contact instant, local frame
    let contact_t = entry.t + dt;
    let shuttle = if dt == 0.0 {
        entry.state
    } else {
        local.state_at(contact_t, &config.aero)?
    };

    let ideal_world = side.state_to_world(court, &entry.state);
    let n_ideal = match hitter.aim {
        AimPolicy::StraightBack => side.vector_to_world(&ideal.normal()),
        AimPolicy::OppositeZone => aim_normal(
            &ideal_world,
            &aim_point(side.other(), config),
            hitter.swing_speed,
            config,
        ),
    };
    let q_ideal = frame::frame_from_z(&-n_ideal);
    let q_ee = if tilt == 0.0 {
        q_ideal
    } else {
        let axis = frame::x_axis(&q_ideal) * tilt_dir.cos() + frame::y_axis(&q_ideal) * tilt_dir.sin();
        UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), tilt) * q_ideal
    };
    let shuttle_world = side.state_to_world(court, &shuttle);
    let p_ideal = side.point_to_world(court, &ideal.p_star);
    let n = frame::face_normal(&q_ee);
    let racket = RacketState {
        p_ee: p_ideal + dp,
        q_ee,
        v_ee: n * hitter.swing_speed,
    };
    let target = TargetTuple {
        p_star: shuttle_world.p,
        q_star: q_ideal,
        t_star: t0 + contact_t,
    };
    let quality = contact::hit_quality(&racket, &target, &config.thresholds);
    let v_out = if quality.success {
        contact::reflect(&shuttle_world.v, &racket.v_ee, &racket.normal()).ok()
    } else {
        None
    };
    Some(HitEvent {
        side,
        t: t0 + contact_t,
        incoming: shuttle_world,
        racket,
        quality,
        success: quality.success,
        v_out,
        net_clear: None,
        landing: None,
        in_bounds: None,
    })
}

/// Serve towards side A drawn from the serve ranges (side A's frame); the
/// first draw whose flight enters A's hitting zone at every hitting height
/// is used.
pub fn sample_serve<R: Rng + ?Sized>(config: &RallyConfig, rng: &mut R) -> Option<ShuttleState> {
    for _ in 0..10_000 {
        let local = corpus::sample_launch(rng, &config.serve_ranges);
        let Ok(traj) = dynamics::simulate(
            &local,
            &config.aero,
            config.dt,
            StopCondition::ground(config.max_flight_time),
        ) else {
            continue;
        };
        let z = config.zone.z;
        if [z.lo, z.mid(), z.hi]
            .iter()
            .all(|&h| corpus::find_zone_entry(&traj, &config.zone, h).is_some())
        {
            return Some(Side::A.state_to_world(&config.court, &local));
        }
    }
    None
}

/// Play one rally from `serve` (world frame, travelling towards side A).
pub fn simulate_rally<R: Rng + ?Sized>(
    config: &RallyConfig,
    hitter_a: &OracleHitter,
    hitter_b: &OracleHitter,
    serve: &ShuttleState,
    rng: &mut R,
) -> RallyOutcome {
    let mut hits = Vec::new();
    let mut flights = Vec::new();
    let mut length = 0;
    let mut receiver = Side::A;
    let Some(mut flight) = flight_from(serve, 0.0, config) else {
        return RallyOutcome {
            hits,
            length,
            termination: Termination::MissGroundContact,
            flights,
        };
    };
    let termination = loop {
        flights.push(flight.clone());
        let hitter = match receiver {
            Side::A => hitter_a,
            Side::B => hitter_b,
        };
        let Some(mut event) = attempt_return(&flight, receiver, hitter, config, rng) else {
            break Termination::MissGroundContact;
        };
        let Some(v_out) = event.v_out else {
            hits.push(event);
            break Termination::MissGroundContact;
        };
        length += 1;
        let launch = ShuttleState::new(event.incoming.p, v_out);
        let Some(next) = flight_from(&launch, event.t, config) else {
            hits.push(event);
            break Termination::MissGroundContact;
        };
        let net_clear = check_net_clearance(&next, &config.court);
        let landing = next.landing().map(|(_, xy)| xy);
        let in_bounds = landing.is_some_and(|xy| check_in_bounds(xy, &config.court, receiver.other()));
        event.net_clear = Some(net_clear);
        event.landing = landing;
        event.in_bounds = Some(in_bounds);
        hits.push(event);
        flight = next;
        if !net_clear {
            flights.push(flight);
            break Termination::NetFault;
        }
        if !in_bounds {
            flights.push(flight);
            break Termination::OutOfBounds;
        }
        if length >= config.max_hits {
            flights.push(flight);
            break Termination::MaxHitsReached;
        }
        receiver = receiver.other();
    };
    RallyOutcome {
        hits,
        length,
        termination,
        flights,
    }
}

/// Rally `index` of a batch: serve and all hitter noise come from the
/// `(seed, "rally", index)` stream.
pub fn simulate_indexed_rally(
    config: &RallyConfig,
    hitter_a: &OracleHitter,
    hitter_b: &OracleHitter,
    seed: u64,
    index: u64,
) -> Option<RallyOutcome> {
    let mut rng = seeds::substream(seed, seeds::RALLY, index);
    let serve = sample_serve(config, &mut rng)?;
    Some(simulate_rally(config, hitter_a, hitter_b, &serve, &mut rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub sigma_pos: f64,
    pub mean_length: f64,
    pub std_length: f64,
    pub n: usize,
}

/// Mean rally length for each position-error level, both hitters sharing
/// `base` with `pos_sigma` replaced. Rally `i` uses the same stream at every
/// level. Output is sorted by sigma.
pub fn sweep_position_error(
    config: &RallyConfig,
    base: &OracleHitter,
    sigmas: &[f64],
    rallies: usize,
    seed: u64,
) -> Vec<SweepPoint> {
    let mut sigmas = sigmas.to_vec();
    sigmas.sort_by(f64::total_cmp);
    sigmas
        .iter()
        .map(|&sigma| {
            let hitter = OracleHitter {
                pos_sigma: sigma,
                ..*base
            };
            let lengths: Vec<f64> = (0..rallies as u64)
                .into_par_iter()
                .filter_map(|i| simulate_indexed_rally(config, &hitter, &hitter, seed, i))
                .map(|o| o.length as f64)
                .collect();
            let (mean_length, std_length) = crate::estimator::mean_std(&lengths);
            SweepPoint {
                sigma_pos: sigma,
                mean_length,
                std_length,
                n: lengths.len(),
            }
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(mut w: W, points: &[SweepPoint], header: &str) -> std::io::Result<()> {
    corpus::write_comment_header(&mut w, header)?;
    writeln!(w, "sigma_pos_m,mean_length,std_length,n")?;
    for p in points {
        writeln!(w, "{},{},{},{}", p.sigma_pos, p.mean_length, p.std_length, p.n)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Summary {
    #[serde(rename = "type")]
    kind: &'static str,
    rally: u64,
    length: usize,
    termination: Termination,
    attempts: usize,
}

#[derive(Serialize)]
struct HitLine<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    rally: u64,
    #[serde(flatten)]
    event: &'a HitEvent,
}

/// JSON-lines log of rally `rally`: one `hit` line per attempt, then a
/// `summary` line.
pub fn write_rally_log<W: Write>(mut w: W, rally: u64, outcome: &RallyOutcome) -> std::io::Result<()> {
    for e in &outcome.hits {
        serde_json::to_writer(
            &mut w,
            &HitLine {
                kind: "hit",
                rally,
                event: e,
            },
        )?;
        writeln!(w)?;
    }
    serde_json::to_writer(
        &mut w,
        &Summary {
            kind: "summary",
            rally,
            length: outcome.length,
            termination: outcome.termination,
            attempts: outcome.hits.len(),
        },
    )?;
    writeln!(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flight_through(points: &[[f64; 3]]) -> Trajectory {
        let samples = points
            .iter()
            .enumerate()
            .map(|(k, p)| Sample {
                t: k as f64 * 0.01,
                state: ShuttleState::new(Vector3::from(*p), Vector3::zeros()),
            })
            .collect();
        Trajectory::new(0.01, samples).unwrap()
    }

    #[test]
    fn net_clearance_cases() {
        let court = CourtSpec::default();
        assert!(check_net_clearance(
            &flight_through(&[[-0.5, 0.0, 2.0], [0.5, 0.0, 2.0]]),
            &court
        ));
        assert!(!check_net_clearance(
            &flight_through(&[[-0.5, 0.0, 1.0], [0.5, 0.0, 1.0]]),
            &court
        ));
        assert!(!check_net_clearance(
            &flight_through(&[[-0.5, 0.0, 1.524], [0.5, 0.0, 1.524]]),
            &court
        ));
        assert!(check_net_clearance(
            &flight_through(&[[-2.0, 0.0, 1.0], [-1.0, 0.0, 0.0]]),
            &court
        ));
    }

    #[test]
    fn bounds_cases() {
        let court = CourtSpec::default();
        assert!(check_in_bounds([2.0, 0.0], &court, Side::B));
        assert!(!check_in_bounds([2.0, 1.80], &court, Side::B));
        assert!(check_in_bounds([4.0, 1.75], &court, Side::B));
        assert!(!check_in_bounds([2.0, 0.0], &court, Side::A));
        assert!(check_in_bounds([-3.0, -1.0], &court, Side::A));
    }

    #[test]
    fn frames_round_trip() {
        let court = CourtSpec::default();
        let p = Vector3::new(1.3, -0.7, 1.55);
        for side in [Side::A, Side::B] {
            let back = side.point_to_world(&court, &side.point_to_local(&court, &p));
            assert!((back - p).norm() < 1e-15);
        }
        assert_eq!(
            Side::B.point_to_local(&court, &Vector3::new(2.0, 0.5, 1.0)),
            Vector3::new(0.0, -0.5, 1.0)
        );
    }

    #[test]
    fn rotation_matches_vector_map() {
        let v = Vector3::new(0.3, -1.2, 0.4);
        for side in [Side::A, Side::B] {
            let r = side.rotation_to_world() * v;
            assert!((r - side.vector_to_world(&v)).norm() < 1e-12);
        }
    }

    #[test]
    fn perfect_hitters_reach_max_hits() {
        let config = RallyConfig::default();
        let h = OracleHitter::default();
        for i in 0..4 {
            let o = simulate_indexed_rally(&config, &h, &h, 7, i).unwrap();
            assert_eq!(
                o.termination,
                Termination::MaxHitsReached,
                "rally {i}: {:?}",
                o.termination
            );
            assert_eq!(o.length, 21);
            for e in &o.hits {
                assert!(e.quality.e_pos < 1e-12);
                assert!(e.quality.e_ori < 1e-6);
            }
        }
    }

    #[test]
    fn straight_back_perfect_hit() {
        let config = RallyConfig::default();
        let h = OracleHitter {
            aim: AimPolicy::StraightBack,
            ..OracleHitter::default()
        };
        let mut rng = seeds::substream(3, seeds::RALLY, 0);
        let serve = sample_serve(&config, &mut rng).unwrap();
        let traj = flight_from(&serve, 0.0, &config).unwrap();
        let e = attempt_return(&traj, Side::A, &h, &config, &mut rng).unwrap();
        assert!(e.success);
        assert_eq!(e.quality.e_pos, 0.0);
        // straight back: outgoing direction opposes incoming
        let v_out = e.v_out.unwrap();
        assert!(v_out.normalize().dot(&e.incoming.v.normalize()) < -0.999);
    }

    #[test]
    fn aim_lands_near_opposite_zone() {
        let config = RallyConfig::default();
        let contact = ShuttleState::new(Vector3::new(-2.1, -0.3, 1.55), Vector3::new(-4.0, 0.5, -5.0));
        let aim = aim_point(Side::B, &config);
        let n = aim_normal(&contact, &aim, 8.0, &config);
        let v_out = contact::reflect(&contact.v, &(n * 8.0), &n).unwrap();
        let hit = crossing_at_height(&ShuttleState::new(contact.p, v_out), aim.z, &config).unwrap();
        assert!((hit.xy() - aim.xy()).norm() < 0.011, "{hit:?} vs {aim:?}");
    }
}

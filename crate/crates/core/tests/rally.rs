use nalgebra::Vector3;
use shuttle_core::contact;
use shuttle_core::dynamics::{self, StopCondition};
use shuttle_core::rally::{
    attempt_return, check_in_bounds, check_net_clearance, sample_serve, simulate_indexed_rally, simulate_rally,
    sweep_position_error, write_rally_log, write_sweep_csv, OracleHitter, RallyConfig, Side, Termination,
};
use shuttle_core::seeds;

#[test]
fn large_position_error_rarely_succeeds() {
    let config = RallyConfig::default();
    let hitter = OracleHitter {
        pos_sigma: 1.0,
        ..OracleHitter::default()
    };
    let mut rng = seeds::substream(11, seeds::RALLY, 0);
    let serve = sample_serve(&config, &mut rng).unwrap();
    let traj = dynamics::simulate(&serve, &config.aero, config.dt, StopCondition::ground(10.0)).unwrap();
    let mut successes = 0;
    let mut attempts = 0;
    for _ in 0..1000 {
        if let Some(e) = attempt_return(&traj, Side::A, &hitter, &config, &mut rng) {
            attempts += 1;
            successes += e.success as usize;
        }
    }
    assert_eq!(attempts, 1000);
    // P(|N(0, I)| ≤ 0.1) for a 3-D Gaussian is about 3e-4
    assert!((successes as f64) < 0.05 * attempts as f64, "{successes}");
}

#[test]
fn no_zone_entry_is_none() {
    let config = RallyConfig::default();
    // dropped straight down far from side A
    let state = shuttle_core::ShuttleState::new(Vector3::new(3.0, 0.0, 3.0), Vector3::zeros());
    let traj = dynamics::simulate(&state, &config.aero, config.dt, StopCondition::ground(10.0)).unwrap();
    let mut rng = seeds::substream(1, seeds::RALLY, 0);
    assert!(attempt_return(&traj, Side::A, &OracleHitter::default(), &config, &mut rng).is_none());
}

#[test]
fn hopeless_receiver_ends_rally_after_one_return() {
    let config = RallyConfig::default();
    let a = OracleHitter::default();
    let b = OracleHitter { pos_sigma: 10.0, ..a };
    for i in 0..20 {
        let o = simulate_indexed_rally(&config, &a, &b, 5, i).unwrap();
        assert!(o.length <= 1);
    }
}

#[test]
fn perfect_rally_invariants() {
    let config = RallyConfig::default();
    let h = OracleHitter::default();
    let o = simulate_indexed_rally(&config, &h, &h, 2024, 0).unwrap();
    assert_eq!(o.length, 21);
    assert_eq!(o.termination, Termination::MaxHitsReached);
    assert_eq!(o.flights.len(), 22);
    for (k, e) in o.hits.iter().enumerate() {
        assert_eq!(e.net_clear, Some(true));
        assert_eq!(e.in_bounds, Some(true));
        let side = if k % 2 == 0 { Side::A } else { Side::B };
        assert_eq!(e.side, side);
        // outgoing flight must clear the net and land in the other half
        let next = &o.flights[k + 1];
        assert!(check_net_clearance(next, &config.court));
        let (_, xy) = next.landing().unwrap();
        assert!(check_in_bounds(xy, &config.court, side.other()));
        // the return is slow enough to reach the hitting zone legitimately
        assert!(next.end_time() - next.start_time() >= config.zone.t_min);
    }
}

#[test]
fn recorded_v_out_matches_reflection_exactly() {
    let config = RallyConfig::default();
    let h = OracleHitter {
        pos_sigma: 0.02,
        ori_sigma: 0.05,
        timing_sigma: 0.002,
        ..OracleHitter::default()
    };
    for i in 0..20 {
        let o = simulate_indexed_rally(&config, &h, &h, 99, i).unwrap();
        let successes = o.hits.iter().filter(|e| e.success).count();
        assert_eq!(successes, o.length);
        for e in &o.hits {
            if let Some(v_out) = e.v_out {
                let again = contact::reflect(&e.incoming.v, &e.racket.v_ee, &e.racket.normal()).unwrap();
                assert_eq!(v_out, again);
            } else {
                assert!(!e.success);
            }
        }
        // termination re-derived from the last flight
        let last = o.flights.last().unwrap();
        match o.termination {
            Termination::NetFault => assert!(!check_net_clearance(last, &config.court)),
            Termination::OutOfBounds => {
                let side = o.hits.last().unwrap().side;
                let ok = last
                    .landing()
                    .is_some_and(|(_, xy)| check_in_bounds(xy, &config.court, side.other()));
                assert!(!ok);
            }
            Termination::MissGroundContact => {
                assert_eq!(o.flights.len(), o.length + 1);
            }
            Termination::MaxHitsReached => assert_eq!(o.length, config.max_hits),
        }
    }
}

#[test]
fn rally_is_deterministic() {
    let config = RallyConfig::default();
    let h = OracleHitter {
        pos_sigma: 0.05,
        ..OracleHitter::default()
    };
    let a = simulate_indexed_rally(&config, &h, &h, 3, 4).unwrap();
    let b = simulate_indexed_rally(&config, &h, &h, 3, 4).unwrap();
    assert_eq!(a, b);
    let (mut la, mut lb) = (Vec::new(), Vec::new());
    write_rally_log(&mut la, 4, &a).unwrap();
    write_rally_log(&mut lb, 4, &b).unwrap();
    assert_eq!(la, lb);
    let last: serde_json::Value = serde_json::from_slice(la.split(|&c| c == b'\n').rev().nth(1).unwrap()).unwrap();
    assert_eq!(last["type"], "summary");
    assert_eq!(last["length"], a.length);
    assert_eq!(last["rally"], 4);
}

#[test]
fn perfect_hitters_never_miss_a_serve() {
    let config = RallyConfig {
        max_hits: 1,
        ..RallyConfig::default()
    };
    let h = OracleHitter::default();
    for i in 0..200 {
        let o = simulate_indexed_rally(&config, &h, &h, 3, i).unwrap();
        assert_eq!(o.termination, Termination::MaxHitsReached, "rally {i}");
    }
}

#[test]
fn explicit_serve_runs() {
    let config = RallyConfig::default();
    let mut rng = seeds::substream(8, seeds::RALLY, 1);
    let serve = sample_serve(&config, &mut rng).unwrap();
    assert!(serve.p.x > 0.0, "serve starts on B's side");
    let h = OracleHitter::default();
    let o = simulate_rally(&config, &h, &h, &serve, &mut rng);
    assert_eq!(o.length, 21);
}

#[test]
fn sweep_is_sorted_and_csv_has_header() {
    let config = RallyConfig::default();
    let pts = sweep_position_error(&config, &OracleHitter::default(), &[0.1, 0.0], 8, 1);
    assert_eq!(pts[0].sigma_pos, 0.0);
    assert_eq!(pts[1].sigma_pos, 0.1);
    assert_eq!(pts[0].mean_length, 21.0);
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &pts, "seed = 1").unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("# seed = 1\n"));
    assert!(text.contains("sigma_pos_m,mean_length,std_length,n"));
}

use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn shuttle() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shuttle"))
}

fn run(args: &[&str], out: &Path) -> Output {
    shuttle()
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

#[test]
fn zero_launches_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["generate", "--n", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[aero]\nlenght = 3.0\n").unwrap();
    let o = shuttle().args(["generate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let missing = shuttle()
        .args(["rally", "--config", "/nonexistent.toml"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn generate_writes_headers_and_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let mut first = Vec::new();
    for _ in 0..2 {
        let o = run(&["generate", "--n", "3000", "--seed", "11"], a.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert!(stdout.contains("rate"));
        assert!(stdout.contains("corpus_stats.csv"));
        let files: Vec<Vec<u8>> = ["corpus.jsonl", "corpus_stats.csv"]
            .iter()
            .map(|n| std::fs::read(a.path().join(n)).unwrap())
            .collect();
        if first.is_empty() {
            first = files;
        } else {
            assert_eq!(first, files);
        }
    }
    let corpus = std::fs::read_to_string(a.path().join("corpus.jsonl")).unwrap();
    let header: serde_json::Value = serde_json::from_str(corpus.lines().next().unwrap()).unwrap();
    assert_eq!(header["config"]["seed"], 11);
    assert_eq!(header["config"]["corpus"]["n"], 3000);
    let stats = std::fs::read_to_string(a.path().join("corpus_stats.csv")).unwrap();
    assert!(stats.starts_with("# shuttle generate\n"));
    assert!(stats.contains("# seed = 11"));
}

#[test]
fn evaluate_ekf_grid_and_zero_noise() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["evaluate-ekf", "--flights", "4", "--sigma", "0"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("ekf_error_curve.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.first().unwrap()[0], "1.00");
    assert_eq!(rows.last().unwrap()[0], "0.05");
    for r in &rows {
        let pos: f64 = r[1].parse().unwrap();
        assert!(pos < 1e-3, "lead {}: {pos}", r[0]);
    }
}

#[test]
fn replay_of_evaluation_flights_reproduces_error_curve() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["evaluate-ekf", "--flights", "3", "--seed", "5"], dir.path());
    assert!(o.status.success());
    let file = dir.path().join("ekf_replay.ndjson");
    let o = shuttle()
        .args(["replay", "--speed", "inf", "--seed", "5", "--out"])
        .arg(dir.path())
        .arg(&file)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("tracks 3"), "{stdout}");
    let table = |name: &str| -> Vec<Vec<f64>> {
        std::fs::read_to_string(dir.path().join(name))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .skip(1)
            .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
            .collect()
    };
    let batch = table("ekf_error_curve.csv");
    let live = table("replay_error_curve.csv");
    assert_eq!(batch.len(), live.len());
    for (a, b) in batch.iter().zip(&live) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-6 || (x.is_nan() && y.is_nan()), "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn serve_replay_prints_summary() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("flight.ndjson");
    std::fs::write(
        &file,
        "{\"type\":\"meas\",\"track\":1,\"t\":0.0,\"p\":[5.0,0.0,1.0]}\n{\"type\":\"meas\",\"track\":1,\"t\":0.01,\"p\":[4.8,0.0,1.1]}\n",
    )
    .unwrap();
    let o = shuttle()
        .args(["serve", "--speed", "inf", "--replay"])
        .arg(&file)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("tracks 1  measurements 2"));
}

#[test]
fn malformed_replay_fails_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.ndjson");
    std::fs::write(&file, "{\"type\":\"close\",\"track\":1}\n{oops\n").unwrap();
    let o = shuttle()
        .args(["replay", "--speed", "inf", "--out"])
        .arg(dir.path())
        .arg(&file)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn rally_with_hopeless_hitter_and_sorted_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "rally",
            "--rallies",
            "3",
            "--sigma-pos",
            "10",
            "--sweep",
            "0.1,0.05",
            "--sweep-rallies",
            "4",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(dir.path().join("rally.jsonl")).unwrap();
    for line in log.lines().skip(1) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        if v["type"] == "summary" {
            assert!(v["length"].as_u64().unwrap() <= 1);
        }
    }
    let sweep = std::fs::read_to_string(dir.path().join("rally_sweep.csv")).unwrap();
    let sigmas: Vec<f64> = sweep
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(sigmas, vec![0.05, 0.1]);
}

#[test]
fn perfect_rally_is_logged_at_twenty_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["rally", "--rallies", "1", "--sweep-rallies", "0"], dir.path());
    assert!(o.status.success());
    let log = std::fs::read_to_string(dir.path().join("rally.jsonl")).unwrap();
    let summary: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(summary["length"], 21);
    assert_eq!(summary["termination"], "max_hits_reached");
}

#[test]
fn port_in_use_exits_three() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let o = shuttle().args(["serve", "--listen", &addr]).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("in use"));
}

#[test]
fn serve_shuts_down_cleanly_on_signal() {
    let mut child = shuttle()
        .args(["serve", "--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    let mut stdout = BufReader::new(child.stdout.take().unwrap());
    stdout.read_line(&mut line).unwrap();
    assert!(line.starts_with("listening on"), "{line}");
    unsafe {
        libc::kill(child.id() as libc::pid_t, libc::SIGINT);
    }
    let start = Instant::now();
    let status = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s;
        }
        assert!(start.elapsed() < Duration::from_secs(10), "server did not stop");
        std::thread::sleep(Duration::from_millis(20));
    };
    assert_eq!(status.code(), Some(0));
    line.clear();
    stdout.read_line(&mut line).unwrap();
    assert_eq!(line.trim(), "shut down");
}

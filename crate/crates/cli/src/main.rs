use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use shuttle_core::corpus::{self, CorpusHeader};
use shuttle_core::estimator::{self, GroundTruth};
use shuttle_core::rally;
use shuttle_core::stream::{self, ReplaySummary, Session};

mod config;

use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(
    name = "shuttle",
    version,
    about = "Shuttlecock flight, prediction and rally toolkit"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Generic override, e.g. `--set aero.length=3.2`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample launches and keep those that reach the hitting zone.
    Generate(GenerateArgs),
    /// Score the tracker's intercept predictions against simulated flights.
    EvaluateEkf(EvalArgs),
    /// Simulate rallies between oracle hitters and sweep position error.
    Rally(RallyArgs),
    /// Run the prediction service.
    Serve(ServeArgs),
    /// Push a measurement file through the prediction service offline.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    n: Option<u64>,
    /// Keep every STRIDE-th trajectory sample in each record.
    #[arg(long, value_name = "STRIDE")]
    store_trajectory: Option<usize>,
    /// Attach 50 Hz position windows to each record.
    #[arg(long)]
    windows: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    flights: Option<usize>,
    /// Measurement noise, m per axis.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    rate: Option<f64>,
}

#[derive(Args)]
struct RallyArgs {
    #[arg(long)]
    rallies: Option<usize>,
    #[arg(long)]
    sigma_pos: Option<f64>,
    #[arg(long)]
    sigma_ori: Option<f64>,
    #[arg(long)]
    sigma_timing: Option<f64>,
    #[arg(long)]
    max_hits: Option<usize>,
    /// Comma-separated position errors for the sweep, m.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<f64>>,
    #[arg(long)]
    sweep_rallies: Option<usize>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    listen: Option<String>,
    /// Replay this file through a local session instead of listening.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long)]
    speed: Option<f64>,
}

#[derive(Args)]
struct ReplayArgs {
    file: PathBuf,
    /// Multiple of real time; `inf` for no pacing.
    #[arg(long)]
    speed: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    AddrInUse(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::AddrInUse(_) => 3,
            Failure::Other(_) => 1,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("shuttle: {e:#}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut overrides = cli.overrides.clone();
    let mut set = |key: &str, value: String| overrides.push(format!("{key}={value}"));
    if let Some(s) = cli.seed {
        set("seed", s.to_string());
    }
    if let Some(o) = &cli.out {
        set("out_dir", toml_string(&o.to_string_lossy()));
    }
    match &cli.command {
        Command::Generate(a) => {
            if let Some(n) = a.n {
                set("corpus.n", n.to_string());
            }
            if let Some(s) = a.store_trajectory {
                set("corpus.store_trajectory", s.to_string());
            }
            if a.windows {
                set("corpus.windows", "true".into());
            }
        }
        Command::EvaluateEkf(a) => {
            if let Some(n) = a.flights {
                set("eval.flights", n.to_string());
            }
            if let Some(s) = a.sigma {
                set("eval.noise_sigma", toml_float(s));
            }
            if let Some(r) = a.rate {
                set("eval.rate_hz", toml_float(r));
            }
        }
        Command::Rally(a) => {
            if let Some(n) = a.rallies {
                set("rally.rallies", n.to_string());
            }
            if let Some(s) = a.sigma_pos {
                set("rally.hitter.pos_sigma", toml_float(s));
            }
            if let Some(s) = a.sigma_ori {
                set("rally.hitter.ori_sigma", toml_float(s));
            }
            if let Some(s) = a.sigma_timing {
                set("rally.hitter.timing_sigma", toml_float(s));
            }
            if let Some(n) = a.max_hits {
                set("rally.max_hits", n.to_string());
            }
            if let Some(s) = &a.sweep {
                let items: Vec<String> = s.iter().map(|x| toml_float(*x)).collect();
                set("rally.sweep_sigmas", format!("[{}]", items.join(", ")));
            }
            if let Some(n) = a.sweep_rallies {
                set("rally.sweep_rallies", n.to_string());
            }
        }
        Command::Serve(a) => {
            if let Some(l) = &a.listen {
                set("stream.listen", toml_string(l));
            }
            if let Some(s) = a.speed {
                set("stream.replay_speed", toml_float(s));
            }
        }
        Command::Replay(a) => {
            if let Some(s) = a.speed {
                set("stream.replay_speed", toml_float(s));
            }
        }
    }
    let config = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Generate(_) => generate(&config),
        Command::EvaluateEkf(_) => evaluate_ekf(&config),
        Command::Rally(_) => run_rally(&config),
        Command::Serve(a) => match a.replay {
            Some(file) => replay_file(&config, &file, false),
            None => serve(&config),
        },
        Command::Replay(a) => replay_file(&config, &a.file, true),
    }
}

fn toml_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:?}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

#[derive(Serialize)]
struct JsonHeader<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    command: &'static str,
    seed: u64,
    config: &'a serde_json::Value,
}

fn write_json_header<W: Write>(w: &mut W, command: &'static str, config: &RunConfig) -> anyhow::Result<()> {
    let value = config.to_json();
    serde_json::to_writer(
        &mut *w,
        &JsonHeader {
            kind: "header",
            command,
            seed: config.seed,
            config: &value,
        },
    )?;
    writeln!(w)?;
    Ok(())
}

fn generate(config: &RunConfig) -> Result<(), Failure> {
    if config.corpus.n == 0 {
        return Err(ConfigError("corpus.n must be at least 1".into()).into());
    }
    let cc = config.corpus_config();
    let (records, stats) = corpus::generate_corpus(config.corpus.n, &cc, config.seed).context("generating corpus")?;
    let dir = &config.out_dir;
    let mut w = create(dir, "corpus.jsonl")?;
    let header = CorpusHeader::new(cc.zone, cc.dt, config.to_json());
    corpus::write_corpus(&mut w, &header, &records).context("writing corpus")?;
    let mut s = create(dir, "corpus_stats.csv")?;
    stats
        .write_csv(&mut s, &config.header("generate"))
        .context("writing stats")?;
    s.flush().context("writing stats")?;
    println!(
        "accepted {} of {} launches (rate {:.6}); {} still airborne at {} s",
        stats.n_accepted,
        stats.n_total,
        stats.acceptance_rate(),
        stats.n_non_terminating,
        cc.max_time
    );
    println!("corpus: {}", dir.join("corpus.jsonl").display());
    println!("t_star histogram: {}", dir.join("corpus_stats.csv").display());
    Ok(())
}

fn evaluation_truths(config: &RunConfig) -> anyhow::Result<Vec<GroundTruth>> {
    let cc = config.corpus_config();
    let records = corpus::first_accepted(config.eval.flights, &cc, config.seed, 100_000_000)?;
    anyhow::ensure!(
        records.len() == config.eval.flights,
        "only {} accepted flights found",
        records.len()
    );
    records
        .iter()
        .map(|r| GroundTruth::from_record(r, &cc).map_err(Into::into))
        .collect()
}

fn evaluate_ekf(config: &RunConfig) -> Result<(), Failure> {
    if config.eval.flights == 0 {
        return Err(ConfigError("eval.flights must be at least 1".into()).into());
    }
    let eval = config.eval_config();
    let truths = evaluation_truths(config)?;
    let report = estimator::evaluate_predictor(&truths, &eval);
    let dir = &config.out_dir;
    let mut w = create(dir, "ekf_error_curve.csv")?;
    report
        .write_csv(&mut w, &config.header("evaluate-ekf"))
        .context("writing error curve")?;
    w.flush().context("writing error curve")?;

    // the same measurements as a replay file, flights back to back on one clock
    let mut r = create(dir, "ekf_replay.ndjson")?;
    write_json_header(&mut r, "evaluate-ekf", config)?;
    let mut offset = 0.0;
    for (i, truth) in truths.iter().enumerate() {
        let fixes = estimator::synthetic_measurements(
            &truth.traj,
            &eval.aero,
            eval.noise_sigma,
            eval.rate_hz,
            eval.seed,
            i as u64,
        );
        stream::write_flight(
            &mut r,
            i as u64,
            &fixes,
            truth.p_star.z,
            Some((truth.t_star, truth.p_star)),
            offset,
        )
        .context("writing replay file")?;
        offset += (truth.traj.end_time() + config.stream.silence_timeout).ceil();
    }
    r.flush().context("writing replay file")?;

    println!("lead_s  pos_err_mm  t_err_ms  n");
    for p in &report.curve {
        println!(
            "{:6.2}  {:10.2}  {:8.2}  {}",
            p.lead_time,
            p.pos_err_mean * 1e3,
            p.t_err_mean * 1e3,
            p.n
        );
    }
    println!("error curve: {}", dir.join("ekf_error_curve.csv").display());
    Ok(())
}

fn run_rally(config: &RunConfig) -> Result<(), Failure> {
    if config.rally.rallies == 0 {
        return Err(ConfigError("rally.rallies must be at least 1".into()).into());
    }
    let rc = config.rally_config();
    let hitter = config.rally.hitter;
    let dir = &config.out_dir;
    let mut log = create(dir, "rally.jsonl")?;
    write_json_header(&mut log, "rally", config)?;
    let mut lengths = Vec::new();
    for i in 0..config.rally.rallies as u64 {
        let outcome = rally::simulate_indexed_rally(&rc, &hitter, &hitter, config.seed, i)
            .context("no serve reaches the hitting zone")?;
        rally::write_rally_log(&mut log, i, &outcome).context("writing rally log")?;
        println!("rally {i}: {} returns, {:?}", outcome.length, outcome.termination);
        lengths.push(outcome.length);
    }
    log.flush().context("writing rally log")?;
    if !config.rally.sweep_sigmas.is_empty() && config.rally.sweep_rallies > 0 {
        let points = rally::sweep_position_error(
            &rc,
            &hitter,
            &config.rally.sweep_sigmas,
            config.rally.sweep_rallies,
            config.seed,
        );
        let mut w = create(dir, "rally_sweep.csv")?;
        rally::write_sweep_csv(&mut w, &points, &config.header("rally")).context("writing sweep")?;
        w.flush().context("writing sweep")?;
        for p in &points {
            println!(
                "sigma_pos {:.3} m: mean length {:.2} (std {:.2}, n {})",
                p.sigma_pos, p.mean_length, p.std_length, p.n
            );
        }
    }
    let best = lengths.iter().max().copied().unwrap_or(0);
    println!("longest rally: {best} returns");
    Ok(())
}

fn serve(config: &RunConfig) -> Result<(), Failure> {
    let addr = &config.stream.listen;
    let listener = TcpListener::bind(addr).map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => Failure::AddrInUse(format!("cannot listen on {addr}: address in use")),
        _ => Failure::Other(anyhow::Error::new(e).context(format!("cannot listen on {addr}"))),
    })?;
    let shutdown = Arc::new(AtomicBool::new(false));
    {
        let shutdown = Arc::clone(&shutdown);
        ctrlc::set_handler(move || shutdown.store(true, Ordering::SeqCst)).context("installing signal handler")?;
    }
    let local = listener.local_addr().context("reading bound address")?;
    println!("listening on {local}");
    std::io::stdout().flush().ok();
    info!("serving with {:?}", config.stream_config());
    stream::serve(listener, config.stream_config(), shutdown).context("service failed")?;
    println!("shut down");
    Ok(())
}

fn replay_file(config: &RunConfig, file: &Path, write_outputs: bool) -> Result<(), Failure> {
    let f = File::open(file).with_context(|| format!("opening {}", file.display()))?;
    let mut session = Session::new(config.stream_config()).map_err(|e| ConfigError(e.to_string()))?;
    let dir = &config.out_dir;
    let mut targets = if write_outputs {
        let mut w = create(dir, "replay_targets.ndjson")?;
        write_json_header(&mut w, "replay", config)?;
        Some(w)
    } else {
        None
    };
    let mut write_err = None;
    let summary = stream::replay(
        BufReader::new(f),
        config.stream.replay_speed,
        &mut session,
        &config.eval.lead_times,
        |m| {
            if let Some(w) = targets.as_mut() {
                if let Err(e) = stream::write_target(w, m) {
                    write_err.get_or_insert(e);
                }
            }
        },
    )
    .with_context(|| format!("replaying {}", file.display()))?;
    if let Some(e) = write_err {
        return Err(anyhow::Error::new(e).context("writing targets").into());
    }
    if let Some(mut w) = targets {
        w.flush().context("writing targets")?;
    }
    print_summary(&summary);
    if write_outputs {
        if let Some(report) = &summary.report {
            let mut w = create(dir, "replay_error_curve.csv")?;
            report
                .write_csv(&mut w, &config.header("replay"))
                .context("writing error curve")?;
            w.flush().context("writing error curve")?;
            println!("error curve: {}", dir.join("replay_error_curve.csv").display());
        }
    }
    Ok(())
}

fn print_summary(s: &ReplaySummary) {
    println!(
        "tracks {}  measurements {}  drops {}  messages {}",
        s.tracks, s.measurements, s.drops, s.messages
    );
    for m in &s.final_messages {
        match (m.valid, m.p_star, m.t_star) {
            (true, Some(p), Some(t)) => println!(
                "track {}: final target ({:.4}, {:.4}, {:.4}) at t = {:.4}",
                m.track, p[0], p[1], p[2], t
            ),
            _ => println!("track {}: no valid final target", m.track),
        }
    }
    if let Some(r) = &s.report {
        for p in &r.curve {
            println!(
                "lead {:.2} s: pos err {:.2} mm, t err {:.2} ms (n {})",
                p.lead_time,
                p.pos_err_mean * 1e3,
                p.t_err_mean * 1e3,
                p.n
            );
        }
    }
}

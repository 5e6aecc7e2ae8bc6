//! Run configuration: one TOML file, overridden by flags, echoed into every
//! output header.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shuttle_core::contact::HitThresholds;
use shuttle_core::corpus::{CorpusConfig, HitZone, LaunchRanges, WindowSpec};
use shuttle_core::dynamics::{self, AeroParams};
use shuttle_core::estimator::{default_lead_times, EkfConfig, EvalConfig};
use shuttle_core::rally::{CourtSpec, OracleHitter, RallyConfig};
use shuttle_core::stream::StreamConfig;

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

impl ConfigError {
    fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub aero: AeroParams,
    pub zone: HitZone,
    pub ekf: EkfConfig,
    pub corpus: CorpusSection,
    pub eval: EvalSection,
    pub rally: RallySection,
    pub stream: StreamSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            aero: AeroParams::default(),
            zone: HitZone::default(),
            ekf: EkfConfig::default(),
            corpus: CorpusSection::default(),
            eval: EvalSection::default(),
            rally: RallySection::default(),
            stream: StreamSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub n: u64,
    pub ranges: LaunchRanges,
    pub dt: f64,
    pub max_time: f64,
    /// Keep every n-th simulation sample per record.
    pub store_trajectory: Option<usize>,
    /// Attach 50 Hz position windows to each record.
    pub windows: bool,
    pub window: WindowSpec,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            n: 100_000,
            ranges: LaunchRanges::default(),
            dt: dynamics::DEFAULT_DT,
            max_time: 3.0,
            store_trajectory: None,
            windows: false,
            window: WindowSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub flights: usize,
    pub noise_sigma: f64,
    pub rate_hz: f64,
    pub lead_times: Vec<f64>,
    pub horizon: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            flights: 20,
            noise_sigma: 0.005,
            rate_hz: 210.0,
            lead_times: default_lead_times(),
            horizon: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RallySection {
    pub rallies: usize,
    pub max_hits: usize,
    pub max_flight_time: f64,
    pub court: CourtSpec,
    pub thresholds: HitThresholds,
    pub hitter: OracleHitter,
    pub sweep_sigmas: Vec<f64>,
    pub sweep_rallies: usize,
}

impl Default for RallySection {
    fn default() -> Self {
        Self {
            rallies: 20,
            max_hits: 21,
            max_flight_time: 10.0,
            court: CourtSpec::default(),
            thresholds: HitThresholds::default(),
            hitter: OracleHitter::default(),
            sweep_sigmas: vec![0.0, 0.02, 0.05, 0.1],
            sweep_rallies: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamSection {
    pub listen: String,
    pub rate_hz: f64,
    pub reorder_depth: usize,
    pub z_target: f64,
    pub horizon: f64,
    pub silence_timeout: f64,
    /// Replay pacing as a multiple of real time; `inf` disables pacing.
    pub replay_speed: f64,
}

impl Default for StreamSection {
    fn default() -> Self {
        let s = StreamConfig::default();
        Self {
            listen: "127.0.0.1:7878".into(),
            rate_hz: s.rate_hz,
            reorder_depth: s.reorder_depth,
            z_target: s.z_target,
            horizon: s.horizon,
            silence_timeout: s.silence_timeout,
            replay_speed: 1.0,
        }
    }
}

impl RunConfig {
    /// Defaults, then the file, then `key=value` overrides (dotted keys,
    /// TOML literal values; bare words are taken as strings).
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value = toml::Value::try_from(RunConfig::default()).map_err(|e| ConfigError::new(e.to_string()))?;
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError::new(format!("cannot read config {}: {e}", path.display())))?;
            let file: toml::Value =
                toml::from_str(&text).map_err(|e| ConfigError::new(format!("{}: {e}", path.display())))?;
            merge(&mut value, file);
        }
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| ConfigError::new(format!("override `{o}` is not key=value")))?;
            set_path(&mut value, key.trim(), parse_literal(raw.trim()))?;
        }
        let config: RunConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::new(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: &str| Err(ConfigError::new(m));
        self.corpus_config()
            .validate()
            .map_err(|e| ConfigError::new(e.to_string()))?;
        if !(self.corpus.max_time > 0.0) {
            return err("corpus.max_time must be positive");
        }
        if self.corpus.store_trajectory == Some(0) {
            return err("corpus.store_trajectory must be at least 1");
        }
        if !(self.eval.noise_sigma >= 0.0) {
            return err("eval.noise_sigma must be non-negative");
        }
        if !(self.eval.rate_hz > 0.0) || !(self.eval.horizon > 0.0) {
            return err("eval.rate_hz and eval.horizon must be positive");
        }
        if self.eval.lead_times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return err("eval.lead_times must be finite and non-negative");
        }
        let ekf = &self.ekf;
        if !(ekf.meas_sigma >= 0.0 && ekf.accel_sigma >= 0.0 && ekf.init_vel_sigma > 0.0 && ekf.max_predict_step > 0.0)
        {
            return err("ekf noise parameters must be non-negative and steps positive");
        }
        let h = &self.rally.hitter;
        if !(h.pos_sigma >= 0.0 && h.ori_sigma >= 0.0 && h.timing_sigma >= 0.0 && h.swing_speed >= 0.0) {
            return err("hitter sigmas and swing speed must be non-negative");
        }
        let c = &self.rally.court;
        if !(c.half_length > 0.0 && c.half_width > 0.0 && c.net_height > 0.0) {
            return err("court dimensions must be positive");
        }
        if self.rally.sweep_sigmas.iter().any(|s| !(*s >= 0.0)) {
            return err("rally.sweep_sigmas must be non-negative");
        }
        if !(self.rally.max_flight_time > 0.0) {
            return err("rally.max_flight_time must be positive");
        }
        self.stream_config()
            .validate()
            .map_err(|e| ConfigError::new(e.to_string()))?;
        if !(self.stream.replay_speed > 0.0) {
            return err("stream.replay_speed must be positive");
        }
        Ok(())
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            ranges: self.corpus.ranges,
            zone: self.zone,
            aero: self.aero,
            dt: self.corpus.dt,
            max_time: self.corpus.max_time,
            store_trajectory: self.corpus.store_trajectory,
            windows: self.corpus.windows.then_some(self.corpus.window),
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            noise_sigma: self.eval.noise_sigma,
            rate_hz: self.eval.rate_hz,
            lead_times: self.eval.lead_times.clone(),
            ekf: self.ekf,
            aero: self.aero,
            horizon: self.eval.horizon,
            seed: self.seed,
        }
    }

    pub fn rally_config(&self) -> RallyConfig {
        RallyConfig {
            court: self.rally.court,
            zone: self.zone,
            aero: self.aero,
            dt: self.corpus.dt,
            thresholds: self.rally.thresholds,
            max_hits: self.rally.max_hits,
            max_flight_time: self.rally.max_flight_time,
            serve_ranges: self.corpus.ranges,
        }
    }

    pub fn stream_config(&self) -> StreamConfig {
        StreamConfig {
            rate_hz: self.stream.rate_hz,
            reorder_depth: self.stream.reorder_depth,
            ekf: self.ekf,
            aero: self.aero,
            z_target: self.stream.z_target,
            horizon: self.stream.horizon,
            silence_timeout: self.stream.silence_timeout,
        }
    }

    /// Resolved config as TOML text.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Header for comment-style outputs.
    pub fn header(&self, command: &str) -> String {
        format!("shuttle {command}\n{}", self.to_toml())
    }
}

fn merge(base: &mut toml::Value, other: toml::Value) {
    match (base, other) {
        (toml::Value::Table(a), toml::Value::Table(b)) => {
            for (k, v) in b {
                match a.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        a.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| ConfigError::new(format!("`{key}`: `{}` is not a table", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Err(ConfigError::new(format!("empty override key `{key}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::load(None, &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        let again: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn overrides_apply_and_unknown_keys_fail() {
        let c = RunConfig::load(None, &["seed=9".into(), "rally.hitter.pos_sigma=0.05".into()]).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.rally.hitter.pos_sigma, 0.05);
        assert!(RunConfig::load(None, &["corpus.bogus=1".into()]).is_err());
        assert!(RunConfig::load(None, &["aero.length=-1".into()]).is_err());
    }

    #[test]
    fn file_merges_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 3\n[aero]\nlength = 3.0\n").unwrap();
        let c = RunConfig::load(Some(&path), &[]).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.aero.length, 3.0);
        assert_eq!(c.aero.gravity, 9.81);
    }
}

//! Scenario configuration: a versioned JSON document. Every field has a
//! default, and the defaults are the reference five-subscriber experiment
//! (see [`ScenarioConfig::golden`]).

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mac::{ChannelModel, ServiceClass, TransmitParams};
use crate::mobility::{GridMap, MobilityError, SpeedParams};
use crate::qoe::{FlowEnvelope, QoeError, QoeParams};
use crate::sim::MICROS_PER_SEC;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read scenario {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("scenario schema violation at `{path}`: {msg}")]
    Schema { path: String, msg: String },
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Version(u32),
    #[error("invalid `{field}`: {msg}")]
    Invalid { field: &'static str, msg: String },
    #[error("flow {index}: {msg}")]
    Flow { index: usize, msg: String },
    #[error("unknown preset `{0}` (available: golden)")]
    UnknownPreset(String),
}

impl From<MobilityError> for ConfigError {
    fn from(e: MobilityError) -> Self {
        ConfigError::Invalid { field: "grid/speed", msg: e.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    Qoe,
    #[default]
    Both,
}

impl Mode {
    pub fn runs(self) -> &'static [RunMode] {
        match self {
            Mode::Baseline => &[RunMode::Baseline],
            Mode::Qoe => &[RunMode::Qoe],
            Mode::Both => &[RunMode::Baseline, RunMode::Qoe],
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "qoe" => Ok(Mode::Qoe),
            "both" => Ok(Mode::Both),
            _ => Err(format!("unknown mode `{s}` (baseline|qoe|both)")),
        }
    }
}

/// A single simulation's controller setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Baseline,
    Qoe,
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Baseline => "baseline",
            RunMode::Qoe => "qoe",
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    /// watts
    pub rx_power_threshold: f64,
    /// Hz
    pub frequency: f64,
    pub tx: TransmitParams,
    /// Defaults to the grid center.
    pub bs_position: Option<[f64; 2]>,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            rx_power_threshold: 2.025e-12,
            frequency: 3.486e9,
            tx: TransmitParams::default(),
            bs_position: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacParams {
    /// seconds
    pub frame_duration: f64,
    /// bytes/s available to uplink grants
    pub nominal_phy_rate: f64,
    /// packets per connection
    pub queue_capacity: usize,
}

impl Default for MacParams {
    fn default() -> Self {
        MacParams { frame_duration: 0.005, nominal_phy_rate: 1_500_000.0, queue_capacity: 50 }
    }
}

impl MacParams {
    pub fn frame_us(&self) -> u64 {
        (self.frame_duration * MICROS_PER_SEC as f64).round() as u64
    }

    /// Bytes grantable per frame.
    pub fn ul_capacity(&self) -> u32 {
        (self.nominal_phy_rate * self.frame_duration).floor() as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    /// bytes
    pub packet_size: u32,
    /// bytes/s
    pub initial_rate: f64,
    /// bytes/s
    pub min_rate: f64,
    #[serde(default)]
    pub priority: u8,
    #[serde(default)]
    pub service_class: ServiceClass,
    /// seconds
    #[serde(default)]
    pub start_time: f64,
}

impl FlowConfig {
    pub fn new(packet_size: u32, initial_rate: f64, min_rate: f64) -> Self {
        FlowConfig {
            packet_size,
            initial_rate,
            min_rate,
            priority: 0,
            service_class: ServiceClass::Be,
            start_time: 0.0,
        }
    }

    pub fn interval(&self) -> f64 {
        self.packet_size as f64 / self.initial_rate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub seed: u64,
    /// seconds
    pub sim_time: f64,
    pub grid: GridMap,
    pub speed: SpeedParams,
    /// Mobility time step, seconds.
    pub mobility_dt: f64,
    pub channel: ChannelParams,
    pub mac: MacParams,
    pub flows: Vec<FlowConfig>,
    pub qoe: QoeParams,
    pub mode: Mode,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::golden()
    }
}

impl ScenarioConfig {
    /// Five subscribers sending 200-byte CBR packets every 1.5/1/1/1/1.5 ms
    /// (133,333 / 200,000 / 200,000 / 200,000 / 133,333 B/s) with minimum
    /// acceptable rates of 120,000 / 150,000 / 150,000 / 150,000 / 120,000
    /// B/s, moving at 15 m/s for 200 s.
    pub fn golden() -> Self {
        let flows = [
            (133_333.0, 120_000.0),
            (200_000.0, 150_000.0),
            (200_000.0, 150_000.0),
            (200_000.0, 150_000.0),
            (133_333.0, 120_000.0),
        ]
        .into_iter()
        .map(|(max, min)| FlowConfig::new(200, max, min))
        .collect();
        ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            seed: 1,
            sim_time: 200.0,
            grid: GridMap::default(),
            speed: SpeedParams::default(),
            mobility_dt: 0.1,
            channel: ChannelParams::default(),
            mac: MacParams::default(),
            flows,
            qoe: QoeParams::default(),
            mode: Mode::Both,
        }
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "golden" => Ok(Self::golden()),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| ConfigError::Schema { path: e.path().to_string(), msg: e.inner().to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn sim_us(&self) -> u64 {
        (self.sim_time * MICROS_PER_SEC as f64).round() as u64
    }

    pub fn mobility_dt_us(&self) -> u64 {
        (self.mobility_dt * MICROS_PER_SEC as f64).round() as u64
    }

    pub fn bs_position(&self) -> (f64, f64) {
        match self.channel.bs_position {
            Some([x, y]) => (x, y),
            None => self.grid.center(),
        }
    }

    pub fn channel_model(&self) -> ChannelModel {
        ChannelModel::new(self.channel.rx_power_threshold, self.channel.frequency, self.channel.tx)
    }

    pub fn envelopes(&self) -> Vec<FlowEnvelope> {
        self.flows
            .iter()
            .enumerate()
            .map(|(i, f)| FlowEnvelope { flow_id: i, initial_rate: f.initial_rate, min_rate: f.min_rate })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field: &'static str, msg: String| Err(ConfigError::Invalid { field, msg });
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Version(self.schema_version));
        }
        if !(self.sim_time > 0.0 && self.sim_time.is_finite()) {
            return invalid("sim_time", format!("must be positive, got {}", self.sim_time));
        }
        self.grid.validate()?;
        self.speed.validate()?;
        if self.mobility_dt_us() == 0 {
            return invalid("mobility_dt", format!("must be at least 1 µs, got {}", self.mobility_dt));
        }
        let ch = &self.channel;
        if !(ch.rx_power_threshold > 0.0) || !(ch.frequency > 0.0) {
            return invalid("channel", "thresholds and frequency must be positive".into());
        }
        let tx = &ch.tx;
        if [tx.pt, tx.gt, tx.gr, tx.ht, tx.hr, tx.system_loss].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return invalid("channel.tx", "transmit parameters must be positive".into());
        }
        if self.mac.frame_us() == 0 {
            return invalid("mac.frame_duration", format!("must be at least 1 µs, got {}", self.mac.frame_duration));
        }
        if !(self.mac.nominal_phy_rate >= 0.0) {
            return invalid("mac.nominal_phy_rate", format!("got {}", self.mac.nominal_phy_rate));
        }
        if self.mac.queue_capacity == 0 {
            return invalid("mac.queue_capacity", "must be at least 1".into());
        }
        self.qoe.validate().map_err(|e| ConfigError::Invalid { field: "qoe", msg: e.to_string() })?;
        if self.flows.is_empty() {
            return invalid("flows", "at least one flow (subscriber station) is required".into());
        }
        for (index, f) in self.flows.iter().enumerate() {
            let flow_err = |msg: String| Err(ConfigError::Flow { index, msg });
            if f.packet_size == 0 {
                return flow_err("packet_size must be positive".into());
            }
            if !(f.start_time >= 0.0) {
                return flow_err(format!("start_time must be non-negative, got {}", f.start_time));
            }
            if let Err(e) = crate::qoe::RateState::new(index, f.initial_rate, f.min_rate) {
                return flow_err(match e {
                    QoeError::MinAboveMax { rate_max, rate_min, .. } => {
                        format!("min_rate {rate_min} exceeds initial_rate {rate_max}")
                    }
                    other => other.to_string(),
                });
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of everything except `mode`, so a
    /// baseline and a QoE run of the same scenario share a digest.
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("mode");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    ScenarioConfig::from_json(&text)
}

//! Scenario configuration: line-oriented `key = value` text.
//!
//! `#` starts a comment. Missing keys keep their defaults, which reproduce
//! the reference simulation settings; unknown keys are rejected.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::channel::FrameSizes;
use crate::edca::EdcaClassParams;
use crate::frog::{MAX_FRAGMENT, MIN_FRAGMENT};
use crate::time::SimTime;
use crate::traffic::{GeneratorConfig, TrafficMix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    Edca,
    Frog,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Edca => "edca",
            Protocol::Frog => "frog",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "edca" => Ok(Protocol::Edca),
            "frog" => Ok(Protocol::Frog),
            other => Err(format!("unknown protocol `{other}` (expected edca or frog)")),
        }
    }
}

impl TrafficMix {
    pub fn name(self) -> &'static str {
        match self {
            TrafficMix::Both => "both",
            TrafficMix::Split => "split",
        }
    }
}

impl FromStr for TrafficMix {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "both" => Ok(TrafficMix::Both),
            "split" => Ok(TrafficMix::Split),
            other => Err(format!("unknown traffic mix `{other}` (expected both or split)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub duration: SimTime,
    pub area_width_m: u32,
    pub area_height_m: u32,
    /// Carried as metadata; no propagation model uses it.
    pub tx_power_dbm: f64,
    /// Vehicles, excluding the sink.
    pub node_count: u16,
    pub protocol: Protocol,
    pub fragment_payload_size: usize,
    pub byte_time: SimTime,
    pub slot_time: SimTime,
    pub urgent: EdcaClassParams,
    pub normal: EdcaClassParams,
    pub t_int: SimTime,
    pub urgent_mean_interval: SimTime,
    pub normal_period: SimTime,
    pub frame_sizes: FrameSizes,
    pub retry_limit: u32,
    pub queue_capacity: usize,
    pub response_guard: SimTime,
    pub traffic_mix: TrafficMix,
    pub seed: u64,
    pub run_count: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            duration: SimTime::from_secs(1000),
            area_width_m: 1000,
            area_height_m: 1000,
            tx_power_dbm: 23.0,
            node_count: 11,
            protocol: Protocol::Frog,
            fragment_payload_size: 2,
            byte_time: SimTime::from_micros(32),
            slot_time: SimTime::from_micros(32),
            urgent: EdcaClassParams::URGENT,
            normal: EdcaClassParams::NORMAL,
            t_int: SimTime::from_micros(600),
            urgent_mean_interval: SimTime::from_secs(2),
            normal_period: SimTime::from_millis(200),
            frame_sizes: FrameSizes::default(),
            retry_limit: 7,
            queue_capacity: 100,
            response_guard: SimTime::from_micros(32),
            traffic_mix: TrafficMix::Both,
            seed: 1,
            run_count: 5,
        }
    }
}

impl ScenarioConfig {
    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            urgent_mean_interval: self.urgent_mean_interval,
            normal_period: self.normal_period,
            mix: self.traffic_mix,
        }
    }

    pub fn params(&self, class: crate::edca::PriorityClass) -> &EdcaClassParams {
        match class {
            crate::edca::PriorityClass::Urgent => &self.urgent,
            crate::edca::PriorityClass::Normal => &self.normal,
        }
    }

    /// Serialize every key, in canonical order.
    pub fn render(&self) -> String {
        let mut out = String::from("# vanet-mac scenario\n");
        for key in KEYS {
            out.push_str(&format!("{key} = {}\n", self.get(key)));
        }
        out
    }

    fn get(&self, key: &str) -> String {
        let us = |t: SimTime| t.as_micros().to_string();
        match key {
            "duration_us" => us(self.duration),
            "area_width_m" => self.area_width_m.to_string(),
            "area_height_m" => self.area_height_m.to_string(),
            "tx_power_dbm" => self.tx_power_dbm.to_string(),
            "node_count" => self.node_count.to_string(),
            "protocol" => self.protocol.to_string(),
            "fragment_payload_size" => self.fragment_payload_size.to_string(),
            "byte_time_us" => us(self.byte_time),
            "slot_time_us" => us(self.slot_time),
            "aifs_urgent_us" => us(self.urgent.aifs),
            "aifs_normal_us" => us(self.normal.aifs),
            "cw_urgent_min" => self.urgent.cw_min.to_string(),
            "cw_urgent_max" => self.urgent.cw_max.to_string(),
            "cw_normal_min" => self.normal.cw_min.to_string(),
            "cw_normal_max" => self.normal.cw_max.to_string(),
            "t_int_us" => us(self.t_int),
            "urgent_mean_interval_us" => us(self.urgent_mean_interval),
            "normal_period_us" => us(self.normal_period),
            "rts_bytes" => self.frame_sizes.rts.to_string(),
            "cts_bytes" => self.frame_sizes.cts.to_string(),
            "ack_bytes" => self.frame_sizes.ack.to_string(),
            "sack_bytes" => self.frame_sizes.sack.to_string(),
            "nack_bytes" => self.frame_sizes.nack.to_string(),
            "ack_p_frag_bytes" => self.frame_sizes.ack_p_frag.to_string(),
            "retry_limit" => self.retry_limit.to_string(),
            "queue_capacity" => self.queue_capacity.to_string(),
            "response_guard_us" => us(self.response_guard),
            "traffic_mix" => self.traffic_mix.name().to_string(),
            "seed" => self.seed.to_string(),
            "run_count" => self.run_count.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Set one key from its textual value, checking that key's own range.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: FromStr>(v: &str) -> Result<T, String> {
            v.parse::<T>().map_err(|_| format!("`{v}` is not a valid number"))
        }
        fn ranged<T: FromStr + PartialOrd + fmt::Display + Copy>(
            v: &str,
            lo: T,
            hi: T,
        ) -> Result<T, String> {
            let x: T = num(v)?;
            if x < lo || x > hi {
                return Err(format!("{x} outside [{lo}, {hi}]"));
            }
            Ok(x)
        }
        let pos_us = |v: &str| ranged::<u64>(v, 1, u64::MAX).map(SimTime::from_micros);
        let bytes = |v: &str| ranged::<u32>(v, 1, 4096);
        match key {
            "duration_us" => self.duration = SimTime::from_micros(num(value)?),
            "area_width_m" => self.area_width_m = num(value)?,
            "area_height_m" => self.area_height_m = num(value)?,
            "tx_power_dbm" => {
                let p: f64 = num(value)?;
                if !p.is_finite() {
                    return Err("power must be finite".into());
                }
                self.tx_power_dbm = p;
            }
            "node_count" => self.node_count = ranged(value, 2, 11)?,
            "protocol" => self.protocol = value.parse()?,
            "fragment_payload_size" => {
                self.fragment_payload_size = ranged(value, MIN_FRAGMENT, MAX_FRAGMENT)?
            }
            "byte_time_us" => self.byte_time = pos_us(value)?,
            "slot_time_us" => self.slot_time = pos_us(value)?,
            "aifs_urgent_us" => self.urgent.aifs = SimTime::from_micros(num(value)?),
            "aifs_normal_us" => self.normal.aifs = SimTime::from_micros(num(value)?),
            "cw_urgent_min" => self.urgent.cw_min = ranged(value, 0, 1 << 20)?,
            "cw_urgent_max" => self.urgent.cw_max = ranged(value, 0, 1 << 20)?,
            "cw_normal_min" => self.normal.cw_min = ranged(value, 0, 1 << 20)?,
            "cw_normal_max" => self.normal.cw_max = ranged(value, 0, 1 << 20)?,
            "t_int_us" => self.t_int = pos_us(value)?,
            "urgent_mean_interval_us" => self.urgent_mean_interval = pos_us(value)?,
            "normal_period_us" => self.normal_period = pos_us(value)?,
            "rts_bytes" => self.frame_sizes.rts = bytes(value)?,
            "cts_bytes" => self.frame_sizes.cts = bytes(value)?,
            "ack_bytes" => self.frame_sizes.ack = bytes(value)?,
            "sack_bytes" => self.frame_sizes.sack = bytes(value)?,
            "nack_bytes" => self.frame_sizes.nack = bytes(value)?,
            "ack_p_frag_bytes" => self.frame_sizes.ack_p_frag = bytes(value)?,
            "retry_limit" => self.retry_limit = ranged(value, 0, 64)?,
            "queue_capacity" => self.queue_capacity = ranged(value, 1, 1_000_000)?,
            "response_guard_us" => self.response_guard = SimTime::from_micros(num(value)?),
            "traffic_mix" => self.traffic_mix = value.parse()?,
            "seed" => self.seed = num(value)?,
            "run_count" => self.run_count = ranged(value, 1, 10_000)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Constraints that span several keys. Returns the offending keys.
    pub fn check_consistency(&self) -> Result<(), (&'static str, String)> {
        for (name, p, min_key) in [
            ("urgent", &self.urgent, "cw_urgent_max"),
            ("normal", &self.normal, "cw_normal_max"),
        ] {
            if p.cw_min > p.cw_max {
                return Err((
                    min_key,
                    format!("{name} cw_min {} exceeds cw_max {}", p.cw_min, p.cw_max),
                ));
            }
        }
        if self.urgent.cw_max >= self.normal.cw_min {
            return Err((
                "cw_normal_min",
                format!(
                    "contention windows overlap: urgent max {} >= normal min {}",
                    self.urgent.cw_max, self.normal.cw_min
                ),
            ));
        }
        Ok(())
    }
}

pub const KEYS: [&str; 30] = [
    "duration_us",
    "area_width_m",
    "area_height_m",
    "tx_power_dbm",
    "node_count",
    "protocol",
    "fragment_payload_size",
    "byte_time_us",
    "slot_time_us",
    "aifs_urgent_us",
    "aifs_normal_us",
    "cw_urgent_min",
    "cw_urgent_max",
    "cw_normal_min",
    "cw_normal_max",
    "t_int_us",
    "urgent_mean_interval_us",
    "normal_period_us",
    "rts_bytes",
    "cts_bytes",
    "ack_bytes",
    "sack_bytes",
    "nack_bytes",
    "ack_p_frag_bytes",
    "retry_limit",
    "queue_capacity",
    "response_guard_us",
    "traffic_mix",
    "seed",
    "run_count",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Malformed { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: invalid value for `{key}`: {reason}")]
    Invalid {
        line: usize,
        key: String,
        reason: String,
    },
}

impl ConfigError {
    pub fn line(&self) -> usize {
        match self {
            ConfigError::Malformed { line }
            | ConfigError::UnknownKey { line, .. }
            | ConfigError::Duplicate { line, .. }
            | ConfigError::Invalid { line, .. } => *line,
        }
    }
}

/// Parse configuration text. Line numbers in errors are 1-based; a
/// cross-key inconsistency involving only defaults reports line 0.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = ScenarioConfig::default();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or(ConfigError::Malformed { line })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Malformed { line });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            });
        }
        if seen.insert(key.to_string(), line).is_some() {
            return Err(ConfigError::Duplicate {
                line,
                key: key.to_string(),
            });
        }
        cfg.set(key, value).map_err(|reason| ConfigError::Invalid {
            line,
            key: key.to_string(),
            reason,
        })?;
    }
    cfg.check_consistency().map_err(|(key, reason)| {
        let related: &[&str] = match key {
            "cw_urgent_max" => &["cw_urgent_min", "cw_urgent_max"],
            "cw_normal_max" => &["cw_normal_min", "cw_normal_max"],
            _ => &["cw_urgent_max", "cw_normal_min"],
        };
        let line = related
            .iter()
            .filter_map(|k| seen.get(*k).copied())
            .max()
            .unwrap_or(0);
        ConfigError::Invalid {
            line,
            key: key.to_string(),
            reason,
        }
    })?;
    Ok(cfg)
}

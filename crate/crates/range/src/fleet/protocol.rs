//! Weapon wire protocol: one JSON object per line, UTF-8.
//!
//! ```text
//! {"seq":1,"type":"HELLO","weapon_id":"lane-1","protocol_version":1,"shooter":"s-1"}
//! {"seq":2,"type":"STATE_REPORT","weapon_id":"lane-1","mode":"Fire","buzzer":true,"sim_time":0.32}
//! ```

use interlock_core::actuator::WeaponMode;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

/// Connection id reserved for the range master; operator commands arrive on
/// it and never from a weapon socket.
pub const OPERATOR: ConnId = 0;

pub type ConnId = u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub seq: u64,
    #[serde(flatten)]
    pub body: Body,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Body {
    Hello {
        weapon_id: String,
        protocol_version: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shooter: Option<String>,
    },
    StateReport {
        weapon_id: String,
        mode: WeaponMode,
        #[serde(default)]
        buzzer: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sim_time: Option<f64>,
    },
    ShotEvent {
        weapon_id: String,
        shooter: String,
        hit: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sim_time: Option<f64>,
    },
    Arm {
        weapon_id: String,
    },
    Disarm {
        weapon_id: String,
    },
    DisarmAll {},
    Ack {
        ack_seq: u64,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ack_seq: Option<u64>,
        reason: String,
    },
}

impl Body {
    pub fn type_name(&self) -> &'static str {
        match self {
            Body::Hello { .. } => "HELLO",
            Body::StateReport { .. } => "STATE_REPORT",
            Body::ShotEvent { .. } => "SHOT_EVENT",
            Body::Arm { .. } => "ARM",
            Body::Disarm { .. } => "DISARM",
            Body::DisarmAll {} => "DISARM_ALL",
            Body::Ack { .. } => "ACK",
            Body::Error { .. } => "ERROR",
        }
    }

    pub fn weapon_id(&self) -> Option<&str> {
        match self {
            Body::Hello { weapon_id, .. }
            | Body::StateReport { weapon_id, .. }
            | Body::ShotEvent { weapon_id, .. }
            | Body::Arm { weapon_id }
            | Body::Disarm { weapon_id } => Some(weapon_id),
            _ => None,
        }
    }
}

impl WireMessage {
    pub fn new(seq: u64, body: Body) -> Self {
        Self { seq, body }
    }

    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("wire messages serialize");
        line.push('\n');
        line
    }
}

/// A line that could not be turned into a [`WireMessage`]. `seq` is
/// recovered when the line was at least a JSON object with a numeric seq.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseFailure {
    pub seq: Option<u64>,
    pub reason: String,
}

pub fn parse_line(line: &str) -> Result<WireMessage, ParseFailure> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| ParseFailure { seq: None, reason: format!("malformed JSON: {e}") })?;
    let seq = value.get("seq").and_then(serde_json::Value::as_u64);
    serde_json::from_value(value).map_err(|e| ParseFailure { seq, reason: format!("invalid message: {e}") })
}

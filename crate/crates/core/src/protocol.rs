//! Session wire protocol, version 1.
//!
//! Every message is one UTF-8 JSON object with a `"type"` field and a
//! `"v": 1` version field. See `PROTOCOL.md` at the repository root for the
//! byte-level description.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::SessionReport;

pub const PROTOCOL_VERSION: u32 = 1;

fn v1() -> u32 {
    PROTOCOL_VERSION
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unsupported protocol version {0}")]
    Version(u32),
}

/// Client to server.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClientMessage {
    /// Calibrate from the most recent buffered hand samples.
    Calibrate {
        #[serde(default = "v1")]
        v: u32,
        facing: [f64; 2],
    },
    Hand {
        #[serde(default = "v1")]
        v: u32,
        t: f64,
        p: [f64; 3],
        grip: f64,
    },
    /// Operator ends the session.
    End {
        #[serde(default = "v1")]
        v: u32,
    },
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, ProtocolError> {
        let msg: ClientMessage =
            serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        let v = match &msg {
            ClientMessage::Calibrate { v, .. }
            | ClientMessage::Hand { v, .. }
            | ClientMessage::End { v } => *v,
        };
        if v != PROTOCOL_VERSION {
            return Err(ProtocolError::Version(v));
        }
        Ok(msg)
    }

    pub fn hand(t: f64, p: [f64; 3], grip: f64) -> Self {
        ClientMessage::Hand { v: PROTOCOL_VERSION, t, p, grip }
    }

    pub fn calibrate(facing: [f64; 2]) -> Self {
        ClientMessage::Calibrate { v: PROTOCOL_VERSION, facing }
    }

    pub fn end() -> Self {
        ClientMessage::End { v: PROTOCOL_VERSION }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("client messages serialize")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockView {
    pub id: u32,
    pub p: [f64; 3],
    pub state: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneView {
    pub c: [f64; 3],
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CueView {
    pub dir: [f64; 3],
    pub grip: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateUpdate {
    pub v: u32,
    /// Session time (s since the first calibrated sample).
    pub t: f64,
    pub backbone: Vec<[f64; 3]>,
    pub blocks: Vec<BlockView>,
    pub zones: Vec<ZoneView>,
    pub cue: CueView,
    pub phase: String,
    pub tower: usize,
    /// `null` when the scenario has no danger zones.
    pub danger_margin: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMessage {
    pub v: u32,
    #[serde(flatten)]
    pub report: SessionReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMessage {
    pub v: u32,
    pub msg: String,
}

/// Server to client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    State(StateUpdate),
    Report(ReportMessage),
    Error(ErrorMessage),
}

impl ServerMessage {
    pub fn error(msg: impl Into<String>) -> Self {
        ServerMessage::Error(ErrorMessage { v: PROTOCOL_VERSION, msg: msg.into() })
    }

    pub fn report(report: SessionReport) -> Self {
        ServerMessage::Report(ReportMessage { v: PROTOCOL_VERSION, report })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }

    pub fn parse(text: &str) -> Result<Self, ProtocolError> {
        serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }
}

//! Event records shared by the engine log and the console gateway.

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Event kinds forwarded to the console gateway. Anything else stays in
/// the engine log only.
pub const GATEWAY_KINDS: &[&str] = &[
    "snapshot",
    "alarm",
    "candidates",
    "dispatch",
    "command_rejected",
    "retriever",
    "turbidity",
    "link_down",
    "policy",
    "paused",
    "resumed",
    "outcome",
];

pub fn is_gateway_kind(kind: &str) -> bool {
    GATEWAY_KINDS.contains(&kind)
}

/// An event before the engine stamps it with tick, phase and source.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub kind: &'static str,
    pub data: Value,
}

impl Event {
    pub fn new(kind: &'static str, data: Value) -> Self {
        Event { kind, data }
    }
}

/// One line of the engine's event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub tick: u64,
    pub phase: u8,
    pub source: String,
    pub kind: String,
    pub payload: Value,
}

impl EventRecord {
    /// The newline-free gateway line for this record, if it is gateway-visible.
    pub fn gateway_line(&self) -> Option<String> {
        is_gateway_kind(&self.kind).then(|| gateway_line(&self.kind, self.tick, &self.payload))
    }
}

/// `{"type":…,"tick":…,"data":…}` with keys in that order.
pub fn gateway_line(kind: &str, tick: u64, data: &Value) -> String {
    #[derive(Serialize)]
    struct Line<'a> {
        #[serde(rename = "type")]
        kind: &'a str,
        tick: u64,
        data: &'a Value,
    }
    serde_json::to_string(&Line { kind, tick, data }).expect("json values always serialize")
}

/// Rounds to 1e-9 so logged reals do not carry platform-specific low bits.
pub fn round9(x: f64) -> f64 {
    let r = (x * 1e9).round() / 1e9;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

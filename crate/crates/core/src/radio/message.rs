//! Typed payloads carried inside [`RadioFrame`]s.
//!
//! All integers are big-endian. Target records (label, confidence and
//! position) do not fit one frame, so `TargetReport` and `DispatchOrder`
//! always travel as two fragments, each starting with a header byte
//! `index << 4 | count`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::frame::{FrameError, MsgType, RadioFrame, PAYLOAD_LEN};
use crate::world::GeoFix;

pub const MAX_LABEL_BYTES: usize = 20;
const FRAGMENTS: u8 = 2;
const FRAGMENT_DATA: usize = PAYLOAD_LEN - 1;

/// Identified target as sent over the air.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub candidate_id: u16,
    /// Confidence × 10 000.
    pub confidence_e4: u16,
    pub geo: GeoFix,
    pub label: String,
}

impl TargetRecord {
    pub fn confidence(&self) -> f64 {
        self.confidence_e4 as f64 / 10_000.0
    }

    fn body(&self) -> Vec<u8> {
        let label = truncate_label(&self.label);
        let mut out = Vec::with_capacity(17 + label.len());
        out.extend_from_slice(&self.candidate_id.to_be_bytes());
        out.extend_from_slice(&self.confidence_e4.to_be_bytes());
        out.extend_from_slice(&self.geo.to_bytes());
        out.push(label.len() as u8);
        out.extend_from_slice(label);
        out
    }

    fn from_body(kind: MsgType, b: &[u8]) -> Result<Self, FrameError> {
        let bad = |reason: &str| FrameError::Payload { kind, reason: reason.to_string() };
        if b.len() < 17 {
            return Err(bad("target record too short"));
        }
        let geo = GeoFix::from_bytes(b[4..16].try_into().unwrap()).map_err(|e| bad(&e.to_string()))?;
        let n = b[16] as usize;
        if n > MAX_LABEL_BYTES || b.len() < 17 + n {
            return Err(bad("label length out of range"));
        }
        let label = std::str::from_utf8(&b[17..17 + n]).map_err(|_| bad("label is not UTF-8"))?;
        Ok(TargetRecord {
            candidate_id: u16::from_be_bytes([b[0], b[1]]),
            confidence_e4: u16::from_be_bytes([b[2], b[3]]),
            geo,
            label: label.to_string(),
        })
    }
}

fn truncate_label(label: &str) -> &[u8] {
    let mut end = label.len().min(MAX_LABEL_BYTES);
    while !label.is_char_boundary(end) {
        end -= 1;
    }
    &label.as_bytes()[..end]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Message {
    GasTelemetry { raw: u16, tick: u32, fix: GeoFix },
    GpsTelemetry { fix: GeoFix, tick: u32 },
    ThermalSummary { frame_id: u32, max_dc: i16, hot_i: u8, hot_j: u8 },
    /// Announces a visual frame on the image link, with the drone's fix and
    /// camera field of view in centi-degrees at capture time.
    VisualSummary { frame_id: u32, drone_fix: GeoFix, fov_cdeg: u16 },
    TargetReport(TargetRecord),
    DispatchOrder(TargetRecord),
    Ack { seq: u16 },
    RetrieverStatus { phase: u8, fix: GeoFix, lidar_mm: u16, flags: u8 },
}

/// `RetrieverStatus.flags` bits.
pub mod status_flags {
    pub const GRASPED: u8 = 0x01;
    pub const LINK_DOWN: u8 = 0x02;
    pub const GPS_LOST: u8 = 0x04;
    pub const CAPACITY: u8 = 0x08;
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::GasTelemetry { .. } => MsgType::GasTelemetry,
            Message::GpsTelemetry { .. } => MsgType::GpsTelemetry,
            Message::ThermalSummary { .. } => MsgType::ThermalSummary,
            Message::VisualSummary { .. } => MsgType::VisualSummary,
            Message::TargetReport(_) => MsgType::TargetReport,
            Message::DispatchOrder(_) => MsgType::DispatchOrder,
            Message::Ack { .. } => MsgType::Ack,
            Message::RetrieverStatus { .. } => MsgType::RetrieverStatus,
        }
    }

    /// Payloads in transmission order; two for fragmented types, one otherwise.
    pub fn to_payloads(&self) -> Vec<Vec<u8>> {
        let mut p = Vec::with_capacity(PAYLOAD_LEN);
        match self {
            Message::GasTelemetry { raw, tick, fix } => {
                p.extend_from_slice(&raw.to_be_bytes());
                p.extend_from_slice(&tick.to_be_bytes());
                p.extend_from_slice(&fix.to_bytes());
            }
            Message::GpsTelemetry { fix, tick } => {
                p.extend_from_slice(&fix.to_bytes());
                p.extend_from_slice(&tick.to_be_bytes());
            }
            Message::ThermalSummary { frame_id, max_dc, hot_i, hot_j } => {
                p.extend_from_slice(&frame_id.to_be_bytes());
                p.extend_from_slice(&max_dc.to_be_bytes());
                p.push(*hot_i);
                p.push(*hot_j);
            }
            Message::VisualSummary { frame_id, drone_fix, fov_cdeg } => {
                p.extend_from_slice(&frame_id.to_be_bytes());
                p.extend_from_slice(&drone_fix.to_bytes());
                p.extend_from_slice(&fov_cdeg.to_be_bytes());
            }
            Message::TargetReport(r) | Message::DispatchOrder(r) => {
                let body = r.body();
                return (0..FRAGMENTS)
                    .map(|i| {
                        let lo = (i as usize * FRAGMENT_DATA).min(body.len());
                        let hi = ((i as usize + 1) * FRAGMENT_DATA).min(body.len());
                        let mut frag = vec![(i << 4) | FRAGMENTS];
                        frag.extend_from_slice(&body[lo..hi]);
                        frag
                    })
                    .collect();
            }
            Message::Ack { seq } => p.extend_from_slice(&seq.to_be_bytes()),
            Message::RetrieverStatus { phase, fix, lidar_mm, flags } => {
                p.push(*phase);
                p.extend_from_slice(&fix.to_bytes());
                p.extend_from_slice(&lidar_mm.to_be_bytes());
                p.push(*flags);
            }
        }
        vec![p]
    }

    pub fn is_fragmented(t: MsgType) -> bool {
        matches!(t, MsgType::TargetReport | MsgType::DispatchOrder)
    }

    /// Parses a single-frame message.
    pub fn parse(frame: &RadioFrame) -> Result<Message, FrameError> {
        let kind = frame.msg_type;
        let p = &frame.payload;
        let bad = |reason: String| FrameError::Payload { kind, reason };
        let fix_at = |i: usize| GeoFix::from_bytes(p[i..i + 12].try_into().unwrap()).map_err(|e| bad(e.to_string()));
        let u16_at = |i: usize| u16::from_be_bytes([p[i], p[i + 1]]);
        let u32_at = |i: usize| u32::from_be_bytes([p[i], p[i + 1], p[i + 2], p[i + 3]]);
        Ok(match kind {
            MsgType::GasTelemetry => Message::GasTelemetry { raw: u16_at(0), tick: u32_at(2), fix: fix_at(6)? },
            MsgType::GpsTelemetry => Message::GpsTelemetry { fix: fix_at(0)?, tick: u32_at(12) },
            MsgType::ThermalSummary => Message::ThermalSummary {
                frame_id: u32_at(0),
                max_dc: i16::from_be_bytes([p[4], p[5]]),
                hot_i: p[6],
                hot_j: p[7],
            },
            MsgType::VisualSummary => {
                Message::VisualSummary { frame_id: u32_at(0), drone_fix: fix_at(4)?, fov_cdeg: u16_at(16) }
            }
            MsgType::Ack => Message::Ack { seq: u16_at(0) },
            MsgType::RetrieverStatus => {
                Message::RetrieverStatus { phase: p[0], fix: fix_at(1)?, lidar_mm: u16_at(13), flags: p[15] }
            }
            MsgType::TargetReport | MsgType::DispatchOrder => {
                return Err(bad("fragmented type needs reassembly".into()));
            }
        })
    }
}

/// Collects fragments per `(sender, type)`. Fragments arrive in order over
/// a stop-and-wait link; an index-0 fragment always restarts assembly.
#[derive(Debug, Default)]
pub struct Reassembler {
    partial: HashMap<(u8, MsgType), Vec<u8>>,
}

impl Reassembler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds one application-delivered frame; returns a message when one completes.
    pub fn push(&mut self, frame: &RadioFrame) -> Result<Option<Message>, FrameError> {
        let kind = frame.msg_type;
        if !Message::is_fragmented(kind) {
            return Message::parse(frame).map(Some);
        }
        let header = frame.payload[0];
        let (index, count) = (header >> 4, header & 0x0F);
        if count != FRAGMENTS || index >= count {
            return Err(FrameError::Payload { kind, reason: format!("bad fragment header {header:#04x}") });
        }
        let key = (frame.sender_id, kind);
        let data = &frame.payload[1..];
        if index == 0 {
            self.partial.insert(key, data.to_vec());
            return Ok(None);
        }
        let Some(mut body) = self.partial.remove(&key) else {
            // orphan tail: its head never arrived
            return Ok(None);
        };
        body.extend_from_slice(data);
        let record = TargetRecord::from_body(kind, &body)?;
        Ok(Some(match kind {
            MsgType::TargetReport => Message::TargetReport(record),
            _ => Message::DispatchOrder(record),
        }))
    }
}

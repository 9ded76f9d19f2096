//! The base station: telemetry ingestion, the detection pipeline, alarm
//! state, the candidate queue and dispatch decisions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::detect::{geolocate, Detector};
use crate::events::{round9, Event};
use crate::radio::{status_flags, Message, TargetRecord};
use crate::retriever::RetrieverPhase;
use crate::sensors::{classify_smoke, GasReading, SmokeClass, SmokeThresholds, VisualFrame};
use crate::world::{geo_to_local, GeoFix};

/// Sightings of the same label closer than this merge into one candidate.
pub const MERGE_RADIUS_M: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmState {
    pub level: SmokeClass,
    pub since_tick: u64,
    pub source_drone: u8,
}

impl Default for AlarmState {
    fn default() -> Self {
        AlarmState { level: SmokeClass::Normal, since_tick: 0, source_drone: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CandidateStatus {
    Pending,
    Dispatched,
    Retrieved,
    Rejected,
}

impl CandidateStatus {
    pub fn can_become(self, next: CandidateStatus) -> bool {
        use CandidateStatus::*;
        matches!((self, next), (Pending, Dispatched) | (Pending, Rejected) | (Dispatched, Retrieved))
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, CandidateStatus::Retrieved | CandidateStatus::Rejected)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTarget {
    pub id: u16,
    pub label: String,
    pub confidence: f64,
    pub geo: GeoFix,
    pub first_seen_tick: u64,
    pub status: CandidateStatus,
}

impl CandidateTarget {
    fn set_status(&mut self, next: CandidateStatus) -> Result<(), DispatchError> {
        if !self.status.can_become(next) {
            return Err(DispatchError::IllegalTransition { id: self.id, from: self.status, to: next });
        }
        self.status = next;
        Ok(())
    }

    fn to_json(&self) -> serde_json::Value {
        json!({
            "id": self.id,
            "label": self.label,
            "confidence": round9(self.confidence),
            "geo": self.geo,
            "first_seen_tick": self.first_seen_tick,
            "status": self.status,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DispatchMode {
    Scripted,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DispatchPolicy {
    pub mode: DispatchMode,
    pub min_confidence: f64,
    /// Dispatch is suppressed while the alarm is at or above this level.
    pub gas_gate: SmokeClass,
}

impl Default for DispatchPolicy {
    fn default() -> Self {
        DispatchPolicy { mode: DispatchMode::Scripted, min_confidence: 0.60, gas_gate: SmokeClass::ThickSmoke }
    }
}

impl DispatchPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(format!("min_confidence must be in [0, 1], got {}", self.min_confidence));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DispatchError {
    #[error("candidate {0} does not exist")]
    UnknownCandidate(u16),
    #[error("candidate {id} is {status:?}, not Pending")]
    NotPending { id: u16, status: CandidateStatus },
    #[error("retriever is busy")]
    RetrieverBusy,
    #[error("alarm level {0:?} gates dispatch")]
    Gated(SmokeClass),
    #[error("candidate {id}: illegal transition {from:?} -> {to:?}")]
    IllegalTransition { id: u16, from: CandidateStatus, to: CandidateStatus },
}

/// Picks the candidate to dispatch, if any.
///
/// Nothing is dispatched while the retriever is busy or the alarm is at or
/// above the policy's gas gate. A human command names its candidate and is
/// honoured in either mode; without one, scripted mode picks the Pending
/// candidate with the highest confidence at or above `min_confidence`,
/// breaking ties by earliest sighting and then lowest id. Human mode never
/// picks on its own.
pub fn decide_dispatch(
    candidates: &[CandidateTarget],
    alarm: &AlarmState,
    policy: &DispatchPolicy,
    retriever_idle: bool,
    command: Option<u16>,
) -> Result<Option<u16>, DispatchError> {
    if let Some(id) = command {
        let c = candidates.iter().find(|c| c.id == id).ok_or(DispatchError::UnknownCandidate(id))?;
        if c.status != CandidateStatus::Pending {
            return Err(DispatchError::NotPending { id, status: c.status });
        }
        if !retriever_idle {
            return Err(DispatchError::RetrieverBusy);
        }
        if alarm.level >= policy.gas_gate {
            return Err(DispatchError::Gated(alarm.level));
        }
        return Ok(Some(id));
    }
    if policy.mode == DispatchMode::Human || !retriever_idle || alarm.level >= policy.gas_gate {
        return Ok(None);
    }
    Ok(candidates
        .iter()
        .filter(|c| c.status == CandidateStatus::Pending && c.confidence >= policy.min_confidence)
        .min_by(|a, b| {
            b.confidence
                .total_cmp(&a.confidence)
                .then(a.first_seen_tick.cmp(&b.first_seen_tick))
                .then(a.id.cmp(&b.id))
        })
        .map(|c| c.id))
}

/// Operator commands arriving from the console gateway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    Dispatch { candidate_id: u16 },
    Reject { candidate_id: u16 },
    SetPolicy {
        #[serde(default)]
        mode: Option<DispatchMode>,
        #[serde(default)]
        min_confidence: Option<f64>,
        #[serde(default)]
        gas_gate: Option<SmokeClass>,
    },
    Pause,
    Resume,
}

pub struct BaseStation {
    pub policy: DispatchPolicy,
    pub thresholds: SmokeThresholds,
    alarm: AlarmState,
    candidates: Vec<CandidateTarget>,
    next_candidate_id: u16,
    known_senders: BTreeSet<u8>,
    detector: Box<dyn Detector + Send>,
    images: BTreeMap<(u8, u32), VisualFrame>,
    active: Option<u16>,
    retriever_phase: RetrieverPhase,
    pending_commands: Vec<u16>,
    last_drone_fix: BTreeMap<u8, GeoFix>,
    dispatch_count: u64,
}

impl BaseStation {
    pub fn new(policy: DispatchPolicy, detector: Box<dyn Detector + Send>, known_senders: impl IntoIterator<Item = u8>) -> Self {
        BaseStation {
            policy,
            thresholds: SmokeThresholds::default(),
            alarm: AlarmState::default(),
            candidates: Vec::new(),
            next_candidate_id: 1,
            known_senders: known_senders.into_iter().collect(),
            detector,
            images: BTreeMap::new(),
            active: None,
            retriever_phase: RetrieverPhase::Idle,
            pending_commands: Vec::new(),
            last_drone_fix: BTreeMap::new(),
            dispatch_count: 0,
        }
    }

    pub fn alarm(&self) -> &AlarmState {
        &self.alarm
    }

    pub fn candidates(&self) -> &[CandidateTarget] {
        &self.candidates
    }

    pub fn candidate(&self, id: u16) -> Option<&CandidateTarget> {
        self.candidates.iter().find(|c| c.id == id)
    }

    pub fn dispatch_count(&self) -> u64 {
        self.dispatch_count
    }

    pub fn retriever_phase(&self) -> RetrieverPhase {
        self.retriever_phase
    }

    pub fn retriever_idle(&self) -> bool {
        self.active.is_none() && self.retriever_phase == RetrieverPhase::Idle
    }

    /// Frames arrive on the camera link separately from the radio summary.
    pub fn receive_image(&mut self, sender: u8, frame_id: u32, frame: VisualFrame) {
        self.images.insert((sender, frame_id), frame);
    }

    /// Applies one decoded message and returns the console events it caused.
    pub fn ingest(&mut self, sender: u8, msg: &Message, tick: u64) -> Vec<Event> {
        if !self.known_senders.contains(&sender) {
            log::warn!("dropping {:?} from unknown sender {sender}", msg.msg_type());
            return vec![Event::new("dropped", json!({ "sender": sender, "msg_type": msg.msg_type() }))];
        }
        match msg {
            Message::GasTelemetry { raw, fix, .. } => {
                self.last_drone_fix.insert(sender, *fix);
                self.on_gas(sender, GasReading { raw: *raw, tick }, tick)
            }
            Message::GpsTelemetry { fix, .. } => {
                self.last_drone_fix.insert(sender, *fix);
                Vec::new()
            }
            Message::ThermalSummary { frame_id, max_dc, hot_i, hot_j } => vec![Event::new(
                "thermal",
                json!({ "sender": sender, "frame_id": frame_id, "max_dc": max_dc, "hot": [hot_i, hot_j] }),
            )],
            Message::VisualSummary { frame_id, drone_fix, fov_cdeg } => {
                self.last_drone_fix.insert(sender, *drone_fix);
                self.on_visual(sender, *frame_id, *drone_fix, *fov_cdeg as f64 / 100.0, tick)
            }
            Message::RetrieverStatus { phase, flags, fix, lidar_mm } => self.on_status(*phase, *flags, *fix, *lidar_mm),
            Message::TargetReport(_) | Message::DispatchOrder(_) | Message::Ack { .. } => Vec::new(),
        }
    }

    fn on_gas(&mut self, sender: u8, reading: GasReading, tick: u64) -> Vec<Event> {
        let level = classify_smoke(reading, &self.thresholds);
        let mut out = vec![Event::new("gas", json!({ "sender": sender, "raw": reading.raw, "level": level }))];
        if level != self.alarm.level {
            let from = self.alarm.level;
            self.alarm = AlarmState { level, since_tick: tick.max(self.alarm.since_tick), source_drone: sender };
            out.push(Event::new(
                "alarm",
                json!({ "from": from, "level": level, "since_tick": self.alarm.since_tick, "source_drone": sender, "raw": reading.raw }),
            ));
        }
        out
    }

    fn on_visual(&mut self, sender: u8, frame_id: u32, drone_fix: GeoFix, fov_deg: f64, tick: u64) -> Vec<Event> {
        let Some(frame) = self.images.remove(&(sender, frame_id)) else {
            return vec![Event::new("image_missing", json!({ "sender": sender, "frame_id": frame_id }))];
        };
        let mut out = Vec::new();
        let (mut added, mut updated) = (Vec::new(), Vec::new());
        for mut det in self.detector.locate(&frame, tick) {
            let geo = match geolocate(&det, drone_fix, drone_fix.alt_cm, fov_deg) {
                Ok(g) => g,
                Err(e) => {
                    out.push(Event::new("geolocate_failed", json!({ "reason": e.to_string() })));
                    continue;
                }
            };
            det.geo = Some(geo);
            out.push(Event::new(
                "detection",
                json!({ "label": det.label, "confidence": round9(det.confidence), "geo": geo, "entity": det.entity_id }),
            ));
            match self.merge_target(&det.label, det.confidence, geo) {
                Some((id, true)) => updated.push(id),
                Some((_, false)) => {}
                None => {
                    let id = self.next_candidate_id;
                    self.next_candidate_id = self.next_candidate_id.wrapping_add(1);
                    self.candidates.push(CandidateTarget {
                        id,
                        label: det.label.clone(),
                        confidence: det.confidence,
                        geo,
                        first_seen_tick: tick,
                        status: CandidateStatus::Pending,
                    });
                    added.push(id);
                }
            }
        }
        if !added.is_empty() || !updated.is_empty() {
            updated.retain(|id| !added.contains(id));
            updated.dedup();
            let pick = |ids: &[u16]| ids.iter().filter_map(|id| self.candidate(*id)).map(|c| c.to_json()).collect::<Vec<_>>();
            out.push(Event::new("candidates", json!({ "added": pick(&added), "updated": pick(&updated) })));
        }
        out
    }

    /// Folds a sighting into an existing candidate with the same label
    /// within [`MERGE_RADIUS_M`]. Returns `(id, changed)` on a match.
    fn merge_target(&mut self, label: &str, confidence: f64, geo: GeoFix) -> Option<(u16, bool)> {
        let c = self.candidates.iter_mut().find(|c| {
            c.label == label
                && geo_to_local(geo, c.geo.ground()).map(|p| p.x_m.hypot(p.y_m) <= MERGE_RADIUS_M).unwrap_or(false)
        })?;
        if c.status == CandidateStatus::Pending && confidence > c.confidence {
            c.confidence = confidence;
            c.geo = geo;
            return Some((c.id, true));
        }
        Some((c.id, false))
    }

    fn on_status(&mut self, phase_code: u8, flags: u8, fix: GeoFix, lidar_mm: u16) -> Vec<Event> {
        let phase = RetrieverPhase::from_code(phase_code).unwrap_or(RetrieverPhase::Fault);
        self.retriever_phase = phase;
        let mut out = vec![Event::new(
            "retriever",
            json!({ "phase": phase, "flags": flags, "fix": fix, "lidar_mm": lidar_mm, "candidate": self.active }),
        )];
        if flags & status_flags::GRASPED != 0 {
            if let Some(id) = self.active.take() {
                if let Some(c) = self.candidates.iter_mut().find(|c| c.id == id) {
                    if c.set_status(CandidateStatus::Retrieved).is_ok() {
                        out.push(Event::new("candidates", json!({ "added": [], "updated": [c.to_json()] })));
                    }
                }
            }
        }
        out
    }

    /// Applies an operator command. Dispatch requests are queued for the
    /// next decision; everything else takes effect immediately.
    pub fn apply_command(&mut self, cmd: &Command) -> Vec<Event> {
        match cmd {
            Command::Dispatch { candidate_id } => {
                self.pending_commands.push(*candidate_id);
                Vec::new()
            }
            Command::Reject { candidate_id } => {
                let res = match self.candidates.iter_mut().find(|c| c.id == *candidate_id) {
                    None => Err(DispatchError::UnknownCandidate(*candidate_id)),
                    Some(c) => c.set_status(CandidateStatus::Rejected).map(|_| c.to_json()),
                };
                match res {
                    Ok(c) => vec![Event::new("candidates", json!({ "added": [], "updated": [c] }))],
                    Err(e) => vec![rejected(cmd, &e)],
                }
            }
            Command::SetPolicy { mode, min_confidence, gas_gate } => {
                let mut next = self.policy.clone();
                if let Some(m) = mode {
                    next.mode = *m;
                }
                if let Some(x) = min_confidence {
                    next.min_confidence = *x;
                }
                if let Some(g) = gas_gate {
                    next.gas_gate = *g;
                }
                match next.validate() {
                    Ok(()) => {
                        self.policy = next;
                        vec![Event::new("policy", serde_json::to_value(&self.policy).expect("policy serializes"))]
                    }
                    Err(reason) => vec![Event::new("command_rejected", json!({ "command": cmd, "reason": reason }))],
                }
            }
            Command::Pause | Command::Resume => Vec::new(),
        }
    }

    /// Runs the dispatch decision; on success marks the candidate Dispatched
    /// and returns the order to send.
    pub fn decide(&mut self, tick: u64) -> (Option<Message>, Vec<Event>) {
        let mut events = Vec::new();
        let commands = std::mem::take(&mut self.pending_commands);
        let idle = self.retriever_idle();
        let mut chosen = None;
        for id in commands {
            match decide_dispatch(&self.candidates, &self.alarm, &self.policy, idle && chosen.is_none(), Some(id)) {
                Ok(pick) => chosen = chosen.or(pick),
                Err(e) => events.push(rejected(&Command::Dispatch { candidate_id: id }, &e)),
            }
        }
        if chosen.is_none() {
            chosen = decide_dispatch(&self.candidates, &self.alarm, &self.policy, idle, None).unwrap_or(None);
        }
        let Some(id) = chosen else {
            return (None, events);
        };
        let c = self.candidates.iter_mut().find(|c| c.id == id).expect("decide_dispatch returns known ids");
        c.set_status(CandidateStatus::Dispatched).expect("chosen candidate is Pending");
        let record = TargetRecord {
            candidate_id: c.id,
            confidence_e4: (c.confidence.clamp(0.0, 1.0) * 10_000.0).round() as u16,
            geo: c.geo,
            label: c.label.clone(),
        };
        let cj = c.to_json();
        self.active = Some(id);
        self.dispatch_count += 1;
        events.push(Event::new("dispatch", json!({ "candidate_id": id, "label": record.label, "geo": record.geo, "tick": tick })));
        events.push(Event::new("candidates", json!({ "added": [], "updated": [cj] })));
        (Some(Message::DispatchOrder(record)), events)
    }

    /// State summary for the periodic console snapshot.
    pub fn snapshot(&self) -> serde_json::Value {
        json!({
            "alarm": self.alarm,
            "candidates": self.candidates.iter().map(|c| c.to_json()).collect::<Vec<_>>(),
            "active_dispatch": self.active,
            "retriever_phase": self.retriever_phase,
            "drone_fixes": self.last_drone_fix.iter().map(|(k, v)| json!({ "sender": k, "fix": v })).collect::<Vec<_>>(),
            "policy": self.policy,
        })
    }
}

fn rejected(cmd: &Command, e: &DispatchError) -> Event {
    Event::new("command_rejected", json!({ "command": cmd, "reason": e.to_string() }))
}

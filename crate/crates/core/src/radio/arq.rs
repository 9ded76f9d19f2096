//! Stop-and-wait ARQ.
//!
//! One frame is in flight per endpoint. It is retransmitted every
//! [`RETX_INTERVAL_TICKS`] until an `Ack` carrying its sequence number
//! arrives, or [`MAX_ATTEMPTS`] transmissions have gone unanswered, at
//! which point the owner is told the link is down. Receivers acknowledge
//! every data frame and suppress duplicates per `(sender_id, seq)` over a
//! sliding window of the last [`DEDUP_WINDOW`] sequence numbers.

use std::collections::{HashMap, HashSet, VecDeque};

use super::frame::{encode, MsgType, RadioFrame};
use super::message::Message;

pub const RETX_INTERVAL_TICKS: u64 = 5;
pub const MAX_ATTEMPTS: u32 = 8;
pub const DEDUP_WINDOW: usize = 4096;

/// Raised when a message exhausted its attempts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkDown {
    pub seq: u16,
    pub msg_type: MsgType,
    pub tick: u64,
}

#[derive(Debug, Clone)]
struct Outgoing {
    msg_id: u64,
    msg_type: MsgType,
    payload: Vec<u8>,
}

#[derive(Debug, Clone)]
struct InFlight {
    msg_id: u64,
    frame: RadioFrame,
    attempts: u32,
    last_sent: u64,
}

#[derive(Debug, Default, Clone)]
struct DedupWindow {
    order: VecDeque<u16>,
    seen: HashSet<u16>,
}

impl DedupWindow {
    /// True when `seq` is new; records it.
    fn admit(&mut self, seq: u16) -> bool {
        if !self.seen.insert(seq) {
            return false;
        }
        self.order.push_back(seq);
        if self.order.len() > DEDUP_WINDOW {
            let old = self.order.pop_front().expect("non-empty");
            self.seen.remove(&old);
        }
        true
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct EndpointStats {
    pub transmissions: u64,
    pub retransmissions: u64,
    pub acked: u64,
    pub link_downs: u64,
    pub duplicates_suppressed: u64,
}

/// What a received frame produced.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Received {
    /// Acknowledgment to send back to the frame's sender.
    pub ack: Option<RadioFrame>,
    /// Frame to hand to the application (first copy only).
    pub deliver: Option<RadioFrame>,
}

#[derive(Debug, Clone)]
pub struct Endpoint {
    id: u8,
    next_seq: u16,
    next_msg_id: u64,
    queue: VecDeque<Outgoing>,
    datagrams: Vec<(MsgType, Vec<u8>)>,
    in_flight: Option<InFlight>,
    windows: HashMap<u8, DedupWindow>,
    stats: EndpointStats,
}

impl Endpoint {
    pub fn new(id: u8) -> Self {
        Self::with_initial_seq(id, 0)
    }

    pub fn with_initial_seq(id: u8, seq: u16) -> Self {
        Endpoint {
            id,
            next_seq: seq,
            next_msg_id: 0,
            queue: VecDeque::new(),
            datagrams: Vec::new(),
            in_flight: None,
            windows: HashMap::new(),
            stats: EndpointStats::default(),
        }
    }

    pub fn id(&self) -> u8 {
        self.id
    }

    pub fn stats(&self) -> EndpointStats {
        self.stats
    }

    pub fn is_idle(&self) -> bool {
        self.in_flight.is_none() && self.queue.is_empty()
    }

    pub fn backlog(&self) -> usize {
        self.queue.len() + usize::from(self.in_flight.is_some())
    }

    /// Queues a message for reliable delivery. Fragmented messages queue one
    /// entry per fragment; if any fragment hits link-down the rest are dropped.
    pub fn send(&mut self, msg: &Message) {
        let msg_id = self.next_msg_id;
        self.next_msg_id += 1;
        for payload in msg.to_payloads() {
            self.queue.push_back(Outgoing { msg_id, msg_type: msg.msg_type(), payload });
        }
    }

    /// Queues a single-frame message for one best-effort transmission on the
    /// next poll. It takes a sequence number but is never retransmitted.
    pub fn send_datagram(&mut self, msg: &Message) {
        assert!(!Message::is_fragmented(msg.msg_type()), "datagrams must fit one frame");
        let payload = msg.to_payloads().pop().expect("one payload");
        self.datagrams.push((msg.msg_type(), payload));
    }

    fn take_seq(&mut self) -> u16 {
        let s = self.next_seq;
        self.next_seq = self.next_seq.wrapping_add(1);
        s
    }

    /// Frames to put on the air at `tick`, plus any link-down signals.
    pub fn poll(&mut self, tick: u64) -> (Vec<RadioFrame>, Vec<LinkDown>) {
        let mut out = Vec::new();
        let mut downs = Vec::new();
        for (t, payload) in std::mem::take(&mut self.datagrams) {
            let seq = self.take_seq();
            self.stats.transmissions += 1;
            out.push(encode(t, self.id, seq, &payload).expect("payloads are built within frame size"));
        }
        if let Some(f) = self.in_flight.as_mut() {
            if tick >= f.last_sent + RETX_INTERVAL_TICKS {
                if f.attempts >= MAX_ATTEMPTS {
                    let f = self.in_flight.take().expect("checked");
                    self.stats.link_downs += 1;
                    downs.push(LinkDown { seq: f.frame.seq, msg_type: f.frame.msg_type, tick });
                    self.queue.retain(|o| o.msg_id != f.msg_id);
                } else {
                    f.attempts += 1;
                    f.last_sent = tick;
                    self.stats.transmissions += 1;
                    self.stats.retransmissions += 1;
                    out.push(f.frame);
                }
            }
        }
        if self.in_flight.is_none() {
            if let Some(o) = self.queue.pop_front() {
                let seq = self.take_seq();
                let frame = encode(o.msg_type, self.id, seq, &o.payload).expect("payloads are built within frame size");
                self.in_flight = Some(InFlight { msg_id: o.msg_id, frame, attempts: 1, last_sent: tick });
                self.stats.transmissions += 1;
                out.push(frame);
            }
        }
        (out, downs)
    }

    /// Handles one decoded frame addressed to this endpoint.
    pub fn receive(&mut self, frame: RadioFrame) -> Received {
        if frame.msg_type == MsgType::Ack {
            let acked = u16::from_be_bytes([frame.payload[0], frame.payload[1]]);
            if self.in_flight.as_ref().is_some_and(|f| f.frame.seq == acked) {
                self.in_flight = None;
                self.stats.acked += 1;
            }
            return Received::default();
        }
        let ack = encode(MsgType::Ack, self.id, frame.seq, &frame.seq.to_be_bytes()).expect("two-byte payload");
        let fresh = self.windows.entry(frame.sender_id).or_default().admit(frame.seq);
        if !fresh {
            self.stats.duplicates_suppressed += 1;
        }
        Received { ack: Some(ack), deliver: fresh.then_some(frame) }
    }
}

//! The engine's NDJSON event log, its replay into gateway lines, and the
//! bounded buffer that feeds the console gateway.

use std::collections::VecDeque;
use std::io::BufRead;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::events::EventRecord;

/// Append-only event log with a running SHA-256 of its bytes.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    records: Vec<EventRecord>,
    text: String,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, rec: EventRecord) {
        if let Some(last) = self.records.last() {
            debug_assert!(rec.tick >= last.tick, "ticks must be nondecreasing");
        }
        self.text.push_str(&serde_json::to_string(&rec).expect("records serialize"));
        self.text.push('\n');
        self.records.push(rec);
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The log exactly as written to disk.
    pub fn as_ndjson(&self) -> &str {
        &self.text
    }

    pub fn hash_hex(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))
    }

    /// Gateway lines this log produces, each without its trailing newline.
    pub fn gateway_lines(&self) -> Vec<String> {
        self.records.iter().filter_map(EventRecord::gateway_line).collect()
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("log line {line} (byte {offset}): {msg}")]
    Parse { line: usize, offset: u64, msg: String },
    #[error("reading log: {0}")]
    Io(#[from] std::io::Error),
}

impl ReplayError {
    pub fn code(&self) -> &'static str {
        match self {
            ReplayError::Parse { .. } => "LOG_PARSE",
            ReplayError::Io(_) => "IO",
        }
    }
}

/// Streams the gateway lines of a recorded log without re-running anything.
/// A final line cut off before its newline is treated as the end of the log.
pub struct Replay<R> {
    src: R,
    line: usize,
    offset: u64,
    buf: String,
    done: bool,
}

impl<R: BufRead> Replay<R> {
    pub fn new(src: R) -> Self {
        Replay { src, line: 0, offset: 0, buf: String::new(), done: false }
    }
}

impl<R: BufRead> Iterator for Replay<R> {
    type Item = Result<String, ReplayError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.buf.clear();
            let n = match self.src.read_line(&mut self.buf) {
                Ok(n) => n,
                Err(e) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
            };
            if n == 0 || !self.buf.ends_with('\n') {
                self.done = true;
                break;
            }
            self.line += 1;
            let start = self.offset;
            self.offset += n as u64;
            let text = self.buf.trim_end_matches(['\n', '\r']);
            if text.is_empty() {
                continue;
            }
            match serde_json::from_str::<EventRecord>(text) {
                Ok(rec) => {
                    if let Some(g) = rec.gateway_line() {
                        return Some(Ok(g));
                    }
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(ReplayError::Parse { line: self.line, offset: start, msg: e.to_string() }));
                }
            }
        }
        None
    }
}

pub fn replay<R: BufRead>(src: R) -> Replay<R> {
    Replay::new(src)
}

pub const GATEWAY_BUFFER_LINES: usize = 10_000;

/// Outbound gateway lines waiting for a console. When full, the oldest
/// line is dropped so the engine never waits on a slow or absent reader.
#[derive(Debug, Clone)]
pub struct GatewayQueue {
    lines: VecDeque<String>,
    cap: usize,
    dropped: u64,
}

impl Default for GatewayQueue {
    fn default() -> Self {
        Self::with_capacity(GATEWAY_BUFFER_LINES)
    }
}

impl GatewayQueue {
    pub fn with_capacity(cap: usize) -> Self {
        GatewayQueue { lines: VecDeque::new(), cap: cap.max(1), dropped: 0 }
    }

    pub fn push(&mut self, line: String) {
        if self.lines.len() == self.cap {
            self.lines.pop_front();
            self.dropped += 1;
        }
        self.lines.push_back(line);
    }

    pub fn drain(&mut self) -> Vec<String> {
        self.lines.drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn rec(tick: u64, kind: &str) -> EventRecord {
        EventRecord { tick, phase: 4, source: "basestation".into(), kind: kind.into(), payload: json!({"x": tick}) }
    }

    fn sample_log() -> EventLog {
        let mut log = EventLog::new();
        for (t, k) in [(0, "alarm"), (1, "gas"), (2, "candidates"), (3, "snapshot")] {
            log.push(rec(t, k));
        }
        log
    }

    #[test]
    fn replay_equals_live_gateway() {
        let log = sample_log();
        let replayed: Vec<String> = replay(log.as_ndjson().as_bytes()).collect::<Result<_, _>>().unwrap();
        assert_eq!(replayed, log.gateway_lines());
        assert_eq!(replayed.len(), 3);
    }

    #[test]
    fn empty_log_empty_stream() {
        assert_eq!(replay(&b""[..]).count(), 0);
    }

    #[test]
    fn truncation_ends_cleanly() {
        let log = sample_log();
        let text = log.as_ndjson();
        let all = log.gateway_lines();
        for cut in 0..text.len() {
            let got: Vec<String> = replay(&text.as_bytes()[..cut]).collect::<Result<_, _>>().unwrap();
            // complete lines before the cut
            let complete = text[..cut].matches('\n').count();
            let want: Vec<String> = log.records()[..complete].iter().filter_map(EventRecord::gateway_line).collect();
            assert_eq!(got, want, "cut at {cut}");
            assert!(got.len() <= all.len());
        }
    }

    #[test]
    fn corrupt_line_reports_position() {
        let log = sample_log();
        let mut lines: Vec<&str> = log.as_ndjson().lines().collect();
        lines[2] = "{\"tick\": 2, oops";
        let text = lines.join("\n") + "\n";
        let out: Vec<_> = replay(text.as_bytes()).collect();
        assert_eq!(out.len(), 2);
        match &out[1] {
            Err(ReplayError::Parse { line, offset, .. }) => {
                assert_eq!(*line, 3);
                assert_eq!(*offset as usize, lines[0].len() + lines[1].len() + 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hash_is_content_hash() {
        let a = sample_log();
        let b = sample_log();
        assert_eq!(a.hash_hex(), b.hash_hex());
        assert_eq!(a.hash_hex(), hex::encode(Sha256::digest(a.as_ndjson().as_bytes())));
    }

    #[test]
    fn queue_drops_oldest() {
        let mut q = GatewayQueue::default();
        for k in 0..10_005 {
            q.push(k.to_string());
        }
        assert_eq!(q.len(), 10_000);
        assert_eq!(q.dropped(), 5);
        assert_eq!(q.drain()[0], "5");
    }
}

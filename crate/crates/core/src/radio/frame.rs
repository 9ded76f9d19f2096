//! The 32-byte wire frame.
//!
//! ```text
//!  0      1        2         3..5      5          6..30      30..32
//! magic  version  msg_type  seq (BE)  sender_id  payload    crc16 (BE)
//! 0xA7   0x01                                    24 bytes   CCITT-FALSE over 0..30
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FRAME_LEN: usize = 32;
pub const PAYLOAD_LEN: usize = 24;
pub const MAGIC: u8 = 0xA7;
pub const VERSION: u8 = 0x01;
const CRC_SPAN: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame must be exactly {FRAME_LEN} bytes, got {0}")]
    FrameSize(usize),
    #[error("crc mismatch: computed {computed:#06x}, frame carries {carried:#06x}")]
    Corrupt { computed: u16, carried: u16 },
    #[error("bad frame header: {0}")]
    FrameFormat(String),
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("payload of {0} bytes exceeds {PAYLOAD_LEN}")]
    PayloadTooLarge(usize),
    #[error("malformed {kind:?} payload: {reason}")]
    Payload { kind: MsgType, reason: String },
}

impl FrameError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            FrameError::FrameSize(_) => "FRAME_SIZE",
            FrameError::Corrupt { .. } => "CORRUPT",
            FrameError::FrameFormat(_) => "FRAME_FORMAT",
            FrameError::UnknownType(_) => "UNKNOWN_TYPE",
            FrameError::PayloadTooLarge(_) => "PAYLOAD_SIZE",
            FrameError::Payload { .. } => "PAYLOAD",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum MsgType {
    GasTelemetry = 0x01,
    GpsTelemetry = 0x02,
    ThermalSummary = 0x03,
    VisualSummary = 0x04,
    TargetReport = 0x05,
    DispatchOrder = 0x06,
    Ack = 0x07,
    RetrieverStatus = 0x08,
}

impl MsgType {
    pub const ALL: [MsgType; 8] = [
        MsgType::GasTelemetry,
        MsgType::GpsTelemetry,
        MsgType::ThermalSummary,
        MsgType::VisualSummary,
        MsgType::TargetReport,
        MsgType::DispatchOrder,
        MsgType::Ack,
        MsgType::RetrieverStatus,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for MsgType {
    type Error = FrameError;

    fn try_from(code: u8) -> Result<Self, FrameError> {
        MsgType::ALL.into_iter().find(|t| *t as u8 == code).ok_or(FrameError::UnknownType(code))
    }
}

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no final xor.
pub fn crc16_ccitt_false(data: &[u8]) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for &byte in data {
        crc ^= (byte as u16) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 { (crc << 1) ^ 0x1021 } else { crc << 1 };
        }
    }
    crc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RadioFrame {
    pub msg_type: MsgType,
    pub seq: u16,
    pub sender_id: u8,
    pub payload: [u8; PAYLOAD_LEN],
}

/// Builds a frame, zero-padding the payload.
pub fn encode(msg_type: MsgType, sender_id: u8, seq: u16, payload: &[u8]) -> Result<RadioFrame, FrameError> {
    if payload.len() > PAYLOAD_LEN {
        return Err(FrameError::PayloadTooLarge(payload.len()));
    }
    let mut buf = [0u8; PAYLOAD_LEN];
    buf[..payload.len()].copy_from_slice(payload);
    Ok(RadioFrame { msg_type, seq, sender_id, payload: buf })
}

impl RadioFrame {
    pub fn to_bytes(&self) -> [u8; FRAME_LEN] {
        let mut out = [0u8; FRAME_LEN];
        out[0] = MAGIC;
        out[1] = VERSION;
        out[2] = self.msg_type.code();
        out[3..5].copy_from_slice(&self.seq.to_be_bytes());
        out[5] = self.sender_id;
        out[6..30].copy_from_slice(&self.payload);
        let crc = crc16_ccitt_false(&out[..CRC_SPAN]);
        out[30..32].copy_from_slice(&crc.to_be_bytes());
        out
    }
}

/// Validates length, CRC, header constants and message type, in that order.
///
/// The CRC is checked before the header so that any transmission damage,
/// including damage to the magic byte, is reported as [`FrameError::Corrupt`];
/// a header that carries a valid CRC is a framing error from the sender.
pub fn decode(bytes: &[u8]) -> Result<RadioFrame, FrameError> {
    if bytes.len() != FRAME_LEN {
        return Err(FrameError::FrameSize(bytes.len()));
    }
    let computed = crc16_ccitt_false(&bytes[..CRC_SPAN]);
    let carried = u16::from_be_bytes([bytes[30], bytes[31]]);
    if computed != carried {
        return Err(FrameError::Corrupt { computed, carried });
    }
    if bytes[0] != MAGIC {
        return Err(FrameError::FrameFormat(format!("magic {:#04x}, expected {MAGIC:#04x}", bytes[0])));
    }
    if bytes[1] != VERSION {
        return Err(FrameError::FrameFormat(format!("version {:#04x}, expected {VERSION:#04x}", bytes[1])));
    }
    let msg_type = MsgType::try_from(bytes[2])?;
    let mut payload = [0u8; PAYLOAD_LEN];
    payload.copy_from_slice(&bytes[6..30]);
    Ok(RadioFrame { msg_type, seq: u16::from_be_bytes([bytes[3], bytes[4]]), sender_id: bytes[5], payload })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn crc_check_value() {
        assert_eq!(crc16_ccitt_false(b"123456789"), 0x29B1);
    }

    #[test]
    fn empty_ack_is_32_zero_padded_bytes() {
        let f = encode(MsgType::Ack, 3, 9, &[]).unwrap();
        let b = f.to_bytes();
        assert_eq!(b.len(), 32);
        assert!(b[6..30].iter().all(|&x| x == 0));
        assert_eq!(&b[..6], &[0xA7, 0x01, 0x07, 0x00, 0x09, 0x03]);
    }

    #[test]
    fn oversize_payload_rejected() {
        assert_eq!(encode(MsgType::Ack, 0, 0, &[0; 25]), Err(FrameError::PayloadTooLarge(25)));
    }

    #[test]
    fn every_single_bit_flip_is_corrupt() {
        let f = encode(MsgType::GasTelemetry, 1, 0xBEEF, b"telemetry").unwrap().to_bytes();
        for bit in 0..256 {
            let mut b = f;
            b[bit / 8] ^= 1 << (bit % 8);
            assert!(matches!(decode(&b), Err(FrameError::Corrupt { .. })), "bit {bit}");
        }
    }

    #[test]
    fn header_errors_with_valid_crc() {
        let mut b = encode(MsgType::Ack, 1, 1, &[]).unwrap().to_bytes();
        b[0] = 0x55;
        let crc = crc16_ccitt_false(&b[..30]);
        b[30..].copy_from_slice(&crc.to_be_bytes());
        assert!(matches!(decode(&b), Err(FrameError::FrameFormat(_))));

        let mut b = encode(MsgType::Ack, 1, 1, &[]).unwrap().to_bytes();
        b[2] = 0x42;
        let crc = crc16_ccitt_false(&b[..30]);
        b[30..].copy_from_slice(&crc.to_be_bytes());
        assert_eq!(decode(&b), Err(FrameError::UnknownType(0x42)));
    }

    #[test]
    fn wrong_length() {
        assert_eq!(decode(&[0; 31]), Err(FrameError::FrameSize(31)));
        assert_eq!(decode(&[0; 33]), Err(FrameError::FrameSize(33)));
    }

    fn arb_type() -> impl Strategy<Value = MsgType> {
        prop::sample::select(MsgType::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn roundtrip(t in arb_type(), sender in any::<u8>(), seq in any::<u16>(), payload in prop::collection::vec(any::<u8>(), 0..=24)) {
            let f = encode(t, sender, seq, &payload).unwrap();
            let back = decode(&f.to_bytes()).unwrap();
            prop_assert_eq!(back, f);
            prop_assert_eq!(&back.payload[..payload.len()], &payload[..]);
        }
    }
}

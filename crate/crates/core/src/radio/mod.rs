//! Constrained radio link: fixed 32-byte frames, a seeded lossy channel and
//! stop-and-wait retransmission.

pub mod arq;
pub mod channel;
pub mod frame;
pub mod message;

pub use arq::{Endpoint, LinkDown, Received, MAX_ATTEMPTS, RETX_INTERVAL_TICKS};
pub use channel::{Channel, ChannelModel, Delivery};
pub use frame::{crc16_ccitt_false, decode, encode, FrameError, MsgType, RadioFrame, FRAME_LEN, PAYLOAD_LEN};
pub use message::{status_flags, Message, Reassembler, TargetRecord};

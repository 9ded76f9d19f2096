use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::frame::FRAME_LEN;
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelModel {
    pub loss_prob: f64,
    pub corrupt_prob: f64,
    pub latency_ticks: u64,
    pub seed: u64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel { loss_prob: 0.0, corrupt_prob: 0.0, latency_ticks: 1, seed: 0 }
    }
}

impl ChannelModel {
    pub fn lossless(latency_ticks: u64) -> Self {
        ChannelModel { latency_ticks, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [("loss_prob", self.loss_prob), ("corrupt_prob", self.corrupt_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Lost,
    Scheduled { at_tick: u64, corrupted_bit: Option<u16> },
}

/// One direction of a lossy link. Every transmission consumes exactly three
/// draws (loss, corruption, bit index) so the schedule of frame `n` depends
/// only on the seed and `n`.
#[derive(Debug, Clone)]
pub struct Channel {
    model: ChannelModel,
    rng: ChaCha8Rng,
    in_flight: Vec<(u64, u64, [u8; FRAME_LEN])>,
    sent: u64,
}

impl Channel {
    /// `salt` separates several directions built from one model.
    pub fn new(model: ChannelModel, salt: u64) -> Self {
        Channel { model, rng: stream_rng(model.seed, 0, stream::CHANNEL, salt), in_flight: Vec::new(), sent: 0 }
    }

    pub fn model(&self) -> &ChannelModel {
        &self.model
    }

    pub fn transmit(&mut self, frame: &[u8; FRAME_LEN], tick: u64) -> Delivery {
        let lose: f64 = self.rng.gen();
        let corrupt: f64 = self.rng.gen();
        let bit: u16 = self.rng.gen_range(0..(FRAME_LEN as u16 * 8));
        self.sent += 1;
        if lose < self.model.loss_prob {
            return Delivery::Lost;
        }
        let mut bytes = *frame;
        let corrupted_bit = (corrupt < self.model.corrupt_prob).then(|| {
            bytes[(bit / 8) as usize] ^= 1 << (bit % 8);
            bit
        });
        let at_tick = tick + self.model.latency_ticks;
        self.in_flight.push((at_tick, self.sent, bytes));
        Delivery::Scheduled { at_tick, corrupted_bit }
    }

    /// Frames due at or before `tick`, in send order.
    pub fn deliver_due(&mut self, tick: u64) -> Vec<[u8; FRAME_LEN]> {
        let (mut due, keep): (Vec<_>, Vec<_>) = self.in_flight.drain(..).partition(|(at, _, _)| *at <= tick);
        self.in_flight = keep;
        due.sort_by_key(|(at, n, _)| (*at, *n));
        due.into_iter().map(|(_, _, b)| b).collect()
    }

    pub fn pending(&self) -> usize {
        self.in_flight.len()
    }
}

//! The six-servo arm and its fixed pick-up script.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SERVO_CHANNELS: u8 = 6;
pub const PULSE_MIN_US: u16 = 500;
pub const PULSE_MAX_US: u16 = 2500;
pub const STAGE_TICKS: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServoCommand {
    pub channel: u8,
    pub pulse_us: u16,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraspError {
    #[error("servo channel {0} out of range")]
    Channel(u8),
    #[error("pulse {0} us outside [{PULSE_MIN_US}, {PULSE_MAX_US}]")]
    Pulse(i64),
}

impl ServoCommand {
    pub fn new(channel: u8, pulse_us: i64) -> Result<Self, GraspError> {
        if channel >= SERVO_CHANNELS {
            return Err(GraspError::Channel(channel));
        }
        if !(PULSE_MIN_US as i64..=PULSE_MAX_US as i64).contains(&pulse_us) {
            return Err(GraspError::Pulse(pulse_us));
        }
        Ok(ServoCommand { channel, pulse_us: pulse_us as u16 })
    }

    pub fn from_angle(channel: u8, deg: f64) -> Result<Self, GraspError> {
        Self::new(channel, angle_to_pulse(deg))
    }

    pub fn angle_deg(&self) -> f64 {
        (self.pulse_us - PULSE_MIN_US) as f64 / (PULSE_MAX_US - PULSE_MIN_US) as f64 * 180.0
    }
}

/// Linear map 0° → 500 µs, 180° → 2500 µs. Out-of-range angles map to
/// out-of-range pulses, which [`ServoCommand::new`] rejects.
pub fn angle_to_pulse(deg: f64) -> i64 {
    (PULSE_MIN_US as f64 + deg / 180.0 * (PULSE_MAX_US - PULSE_MIN_US) as f64).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraspStage {
    Open,
    Lower,
    Close,
    Lift,
    Stow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedServo {
    pub tick: u64,
    pub stage: GraspStage,
    pub command: ServoCommand,
}

/// Joint angles per stage: base, shoulder, elbow, wrist pitch, wrist roll, gripper.
const SCRIPT: [(GraspStage, [f64; 6]); 5] = [
    (GraspStage::Open, [90.0, 90.0, 90.0, 90.0, 90.0, 20.0]),
    (GraspStage::Lower, [90.0, 135.0, 60.0, 120.0, 90.0, 20.0]),
    (GraspStage::Close, [90.0, 135.0, 60.0, 120.0, 90.0, 150.0]),
    (GraspStage::Lift, [90.0, 90.0, 100.0, 90.0, 90.0, 150.0]),
    (GraspStage::Stow, [90.0, 30.0, 160.0, 45.0, 90.0, 150.0]),
];

pub fn script_duration_ticks() -> u64 {
    SCRIPT.len() as u64 * STAGE_TICKS
}

pub fn build_script(stages: &[(GraspStage, [f64; 6])], start_tick: u64) -> Result<Vec<TimedServo>, GraspError> {
    let mut out = Vec::with_capacity(stages.len() * SERVO_CHANNELS as usize);
    for (k, (stage, angles)) in stages.iter().enumerate() {
        for (ch, deg) in angles.iter().enumerate() {
            out.push(TimedServo {
                tick: start_tick + k as u64 * STAGE_TICKS,
                stage: *stage,
                command: ServoCommand::from_angle(ch as u8, *deg)?,
            });
        }
    }
    Ok(out)
}

/// The pick-up script starting at `start_tick`: open, lower, close, lift,
/// stow, one full six-channel set per stage.
pub fn grasp_sequence(start_tick: u64) -> Vec<TimedServo> {
    build_script(&SCRIPT, start_tick).expect("built-in script is in range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pulse_map() {
        assert_eq!(angle_to_pulse(90.0), 1500);
        assert_eq!(angle_to_pulse(0.0), 500);
        assert_eq!(angle_to_pulse(180.0), 2500);
        assert_eq!(ServoCommand::from_angle(2, 45.0).unwrap().angle_deg(), 45.0);
    }

    #[test]
    fn script_shape() {
        let s = grasp_sequence(100);
        assert_eq!(s.len(), 30);
        assert_eq!(script_duration_ticks(), 50);
        assert_eq!(s.first().unwrap().tick, 100);
        assert_eq!(s.last().unwrap().tick, 140);
        assert_eq!(s.last().unwrap().stage, GraspStage::Stow);
        for k in 0..5 {
            let chans: Vec<u8> = s[k * 6..k * 6 + 6].iter().map(|c| c.command.channel).collect();
            assert_eq!(chans, vec![0, 1, 2, 3, 4, 5]);
        }
    }

    #[test]
    fn out_of_range_rejected() {
        assert_eq!(ServoCommand::from_angle(0, 181.0), Err(GraspError::Pulse(2511)));
        assert_eq!(ServoCommand::new(6, 1500), Err(GraspError::Channel(6)));
        let bad = [(GraspStage::Open, [90.0, 90.0, -5.0, 90.0, 90.0, 90.0])];
        assert!(build_script(&bad, 0).is_err());
    }
}

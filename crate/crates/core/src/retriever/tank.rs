use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_LOAD_G: u32 = 2000;
pub const MAX_DRIVE_V: f64 = 8.4;

/// Tracked chassis speed envelope: stalled below `stall_v`, linear up to
/// `v_max_mps` at `full_v`, derated linearly with load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TankModel {
    pub drive_v: f64,
    pub load_g: u32,
    pub v_max_mps: f64,
    pub stall_v: f64,
    pub full_v: f64,
    pub load_derate: f64,
}

impl Default for TankModel {
    fn default() -> Self {
        TankModel { drive_v: 6.8, load_g: 0, v_max_mps: 0.5, stall_v: 5.5, full_v: 6.8, load_derate: 0.4 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TankError {
    #[error("load {0} g exceeds the {MAX_LOAD_G} g capacity")]
    CapacityExceeded(u32),
    #[error("invalid tank model: {0}")]
    Invalid(String),
}

impl TankModel {
    pub fn validate(&self) -> Result<(), TankError> {
        if !(0.0..=MAX_DRIVE_V).contains(&self.drive_v) {
            return Err(TankError::Invalid(format!("drive_v {} outside [0, {MAX_DRIVE_V}]", self.drive_v)));
        }
        if !(self.stall_v < self.full_v) {
            return Err(TankError::Invalid(format!("stall_v {} must be below full_v {}", self.stall_v, self.full_v)));
        }
        if !(self.v_max_mps > 0.0 && self.v_max_mps.is_finite()) {
            return Err(TankError::Invalid(format!("v_max_mps {}", self.v_max_mps)));
        }
        if !(0.0..=1.0).contains(&self.load_derate) {
            return Err(TankError::Invalid(format!("load_derate {} outside [0, 1]", self.load_derate)));
        }
        if self.load_g > MAX_LOAD_G {
            return Err(TankError::CapacityExceeded(self.load_g));
        }
        Ok(())
    }

    pub fn with_load(self, load_g: u32) -> Self {
        TankModel { load_g, ..self }
    }
}

pub fn tank_speed(m: &TankModel) -> Result<f64, TankError> {
    m.validate()?;
    if m.drive_v < m.stall_v {
        return Ok(0.0);
    }
    let throttle = ((m.drive_v - m.stall_v) / (m.full_v - m.stall_v)).min(1.0);
    let derate = 1.0 - m.load_derate * m.load_g as f64 / MAX_LOAD_G as f64;
    Ok(m.v_max_mps * throttle * derate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(v: f64, load: u32) -> f64 {
        tank_speed(&TankModel { drive_v: v, load_g: load, ..TankModel::default() }).unwrap()
    }

    #[test]
    fn envelope_points() {
        assert_eq!(at(5.4, 0), 0.0);
        assert_eq!(at(5.4, 2000), 0.0);
        assert_eq!(at(6.8, 0), 0.5);
        assert!((at(6.15, 1000) - 0.5 * 0.5 * 0.8).abs() < 1e-12);
        assert_eq!(at(8.4, 0), 0.5);
    }

    #[test]
    fn over_capacity_refused() {
        let m = TankModel { load_g: 2001, ..TankModel::default() };
        assert_eq!(tank_speed(&m), Err(TankError::CapacityExceeded(2001)));
        assert!(tank_speed(&m.with_load(2000)).is_ok());
    }

    #[test]
    fn monotone_on_grid() {
        for li in 0..=20 {
            let load = li * 100;
            for vi in 0..84 {
                let v = vi as f64 * 0.1;
                assert!(at(v + 0.1, load) >= at(v, load));
                if load < 2000 {
                    assert!(at(v, load + 100) <= at(v, load));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_models() {
        assert!(TankModel { drive_v: 9.0, ..TankModel::default() }.validate().is_err());
        assert!(TankModel { stall_v: 7.0, ..TankModel::default() }.validate().is_err());
    }
}

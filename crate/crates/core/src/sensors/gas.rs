use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{stream, stream_rng};
use crate::world::{smoke_density_at, LocalPoint, SmokeField};

pub const ADC_FULL_SCALE: u16 = 1023;

/// One ADC sample from the MQ-2 style gas sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasReading {
    pub raw: u16,
    pub tick: u64,
}

/// Saturating hyperbolic response: `1023·c/(c + K)` plus uniform integer noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GasModel {
    pub half_saturation: f64,
    pub noise_amplitude: u16,
}

impl Default for GasModel {
    fn default() -> Self {
        GasModel { half_saturation: 0.8, noise_amplitude: 8 }
    }
}

impl GasModel {
    pub fn noiseless() -> Self {
        GasModel { noise_amplitude: 0, ..Self::default() }
    }

    /// Noise-free counts for density `c`. Ties round to even, like a
    /// converter whose midpoint comparator alternates.
    pub fn response(&self, c: f64) -> i32 {
        let c = c.max(0.0);
        (ADC_FULL_SCALE as f64 * c / (c + self.half_saturation)).round_ties_even() as i32
    }
}

pub fn sample_gas(field: &SmokeField, p: LocalPoint, model: &GasModel, seed: u64, tick: u64) -> GasReading {
    let c = smoke_density_at(field, p);
    let a = model.noise_amplitude as i32;
    let noise = if a == 0 {
        0
    } else {
        stream_rng(seed, tick, stream::GAS, 0).gen_range(-a..=a)
    };
    let raw = (model.response(c) + noise).clamp(0, ADC_FULL_SCALE as i32) as u16;
    GasReading { raw, tick }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SmokeClass {
    Normal,
    Elevated,
    ThickSmoke,
}

/// Two-tier alarm ladder on raw counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmokeThresholds {
    /// Readings at or above this are at least `Elevated`.
    pub elevated_at: u16,
    /// Readings strictly above this are `ThickSmoke`.
    pub thick_above: u16,
}

impl Default for SmokeThresholds {
    fn default() -> Self {
        SmokeThresholds { elevated_at: 200, thick_above: 400 }
    }
}

pub fn classify_smoke(r: GasReading, t: &SmokeThresholds) -> SmokeClass {
    if r.raw > t.thick_above {
        SmokeClass::ThickSmoke
    } else if r.raw >= t.elevated_at {
        SmokeClass::Elevated
    } else {
        SmokeClass::Normal
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reading(raw: u16) -> GasReading {
        GasReading { raw, tick: 0 }
    }

    #[test]
    fn response_examples() {
        let m = GasModel::noiseless();
        assert_eq!(m.response(0.0), 0);
        assert_eq!(m.response(0.8), 512);
        assert_eq!(m.response(4.0), 852);
    }

    #[test]
    fn noiseless_samples() {
        let m = GasModel::noiseless();
        let f = SmokeField::uniform(1.0, [0.0, 0.0], 2, 2, 4.0).unwrap();
        assert_eq!(sample_gas(&f, LocalPoint::new(1.0, 1.0, 0.0), &m, 1, 1).raw, 852);
        assert_eq!(sample_gas(&SmokeField::clear(), LocalPoint::new(9.0, 9.0, 0.0), &m, 1, 1).raw, 0);
    }

    #[test]
    fn noise_bounded_and_reproducible() {
        let m = GasModel::default();
        let f = SmokeField::uniform(1.0, [0.0, 0.0], 2, 2, 0.8).unwrap();
        let p = LocalPoint::new(1.0, 1.0, 0.0);
        for tick in 0..500 {
            let a = sample_gas(&f, p, &m, 42, tick);
            assert_eq!(a, sample_gas(&f, p, &m, 42, tick));
            assert!((504..=520).contains(&a.raw), "{}", a.raw);
        }
    }

    #[test]
    fn saturates_below_full_scale() {
        let m = GasModel::noiseless();
        let mut prev = 0;
        for k in 0..2000 {
            let r = m.response(k as f64 * 0.05);
            assert!(r >= prev);
            assert!(r <= 1023);
            prev = r;
        }
        assert!(m.response(1e6) < 1024);
    }

    #[test]
    fn ladder_examples() {
        let t = SmokeThresholds::default();
        assert_eq!(classify_smoke(reading(150), &t), SmokeClass::Normal);
        assert_eq!(classify_smoke(reading(199), &t), SmokeClass::Normal);
        assert_eq!(classify_smoke(reading(200), &t), SmokeClass::Elevated);
        assert_eq!(classify_smoke(reading(250), &t), SmokeClass::Elevated);
        assert_eq!(classify_smoke(reading(400), &t), SmokeClass::Elevated);
        assert_eq!(classify_smoke(reading(401), &t), SmokeClass::ThickSmoke);
        assert_eq!(classify_smoke(reading(450), &t), SmokeClass::ThickSmoke);
    }

    #[test]
    fn ladder_monotone() {
        let t = SmokeThresholds::default();
        let levels: Vec<_> = (0..=1023).map(|r| classify_smoke(reading(r), &t)).collect();
        assert!(levels.windows(2).all(|w| w[0] <= w[1]));
    }
}

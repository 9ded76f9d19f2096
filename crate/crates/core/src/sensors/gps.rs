use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::{stream, stream_rng};
use crate::world::{local_to_geo, GeoFix, LocalPoint, WorldError};

/// Horizontal GPS error model. `sigma_m` is the horizontal RMS error; each
/// axis gets `sigma_m/√2`, and the radial offset is clipped at `3·sigma_m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpsModel {
    pub sigma_m: f64,
}

impl Default for GpsModel {
    fn default() -> Self {
        GpsModel { sigma_m: 2.5 }
    }
}

/// Horizontal noise offset `(east, north)` in meters for `(seed, tick, salt)`.
pub fn gps_offset(model: &GpsModel, seed: u64, tick: u64, salt: u64) -> (f64, f64) {
    if model.sigma_m <= 0.0 {
        return (0.0, 0.0);
    }
    let axis = Normal::new(0.0, model.sigma_m / std::f64::consts::SQRT_2).expect("finite sigma");
    let mut rng = stream_rng(seed, tick, stream::GPS, salt);
    let (mut dx, mut dy) = (axis.sample(&mut rng), axis.sample(&mut rng));
    let r = dx.hypot(dy);
    let cap = 3.0 * model.sigma_m;
    if r > cap {
        dx *= cap / r;
        dy *= cap / r;
    }
    (dx, dy)
}

/// A noisy fix of `truth`. `salt` separates receivers sharing a seed.
pub fn sample_gps(
    truth: LocalPoint,
    origin: GeoFix,
    model: &GpsModel,
    seed: u64,
    tick: u64,
    salt: u64,
) -> Result<GeoFix, WorldError> {
    let (dx, dy) = gps_offset(model, seed, tick, salt);
    local_to_geo(truth.offset(dx, dy, 0.0), origin)
}

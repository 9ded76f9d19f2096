//! Scripted lawnmower sweep for the search drone.

use super::scenario::DroneConfig;
use crate::world::LocalPoint;

/// Fraction of the camera footprint between adjacent rows.
pub const ROW_SPACING_FRACTION: f64 = 0.8;

/// Back-and-forth rows across the sweep area, flown forward then in
/// reverse, indefinitely.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPath {
    waypoints: Vec<LocalPoint>,
    cumulative: Vec<f64>,
    alt_m: f64,
}

impl SweepPath {
    pub fn new(cfg: &DroneConfig) -> Self {
        let [x0, y0, x1, y1] = cfg.area_m;
        let spacing = cfg.footprint_m() * ROW_SPACING_FRACTION;
        let rows: Vec<f64> = (0..)
            .map(|k| y0 + spacing * (k as f64 + 0.5))
            .take_while(|y| *y < y1)
            .collect();
        let rows = if rows.is_empty() { vec![(y0 + y1) / 2.0] } else { rows };
        let mut waypoints = Vec::with_capacity(rows.len() * 2);
        for (k, y) in rows.iter().enumerate() {
            let (a, b) = if k % 2 == 0 { (x0, x1) } else { (x1, x0) };
            waypoints.push(LocalPoint::new(a, *y, cfg.alt_m));
            waypoints.push(LocalPoint::new(b, *y, cfg.alt_m));
        }
        let mut cumulative = vec![0.0];
        for w in waypoints.windows(2) {
            let last = *cumulative.last().expect("non-empty");
            cumulative.push(last + w[0].horizontal_distance(&w[1]));
        }
        SweepPath { waypoints, cumulative, alt_m: cfg.alt_m }
    }

    pub fn waypoints(&self) -> &[LocalPoint] {
        &self.waypoints
    }

    pub fn length_m(&self) -> f64 {
        *self.cumulative.last().expect("non-empty")
    }

    /// Position after flying `s` meters, bouncing at either end.
    pub fn position_at(&self, s: f64) -> LocalPoint {
        let len = self.length_m();
        if len <= 0.0 {
            return self.waypoints[0];
        }
        let period = 2.0 * len;
        let mut d = s.rem_euclid(period);
        if d > len {
            d = period - d;
        }
        let k = match self.cumulative.binary_search_by(|c| c.total_cmp(&d)) {
            Ok(k) => return self.waypoints[k],
            Err(k) => k - 1,
        };
        let (a, b) = (self.waypoints[k], self.waypoints[k + 1]);
        let f = (d - self.cumulative[k]) / (self.cumulative[k + 1] - self.cumulative[k]);
        LocalPoint::new(a.x_m + f * (b.x_m - a.x_m), a.y_m + f * (b.y_m - a.y_m), self.alt_m)
    }
}

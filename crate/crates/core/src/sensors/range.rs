//! Ultrasonic rangers and the LIDAR, both working in the horizontal plane.

use serde::{Deserialize, Serialize};

use crate::world::{LocalPoint, World};

pub const SONAR_MIN_MM: u32 = 20;
pub const SONAR_MAX_MM: u32 = 4000;
pub const LIDAR_MIN_MM: u32 = 1;
pub const LIDAR_MAX_MM: u32 = 12_000;
pub const SONAR_HALF_ANGLE_RAD: f64 = 15.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RangeSensor {
    Left,
    Center,
    Right,
    Lidar,
}

impl RangeSensor {
    fn limits(self) -> (u32, u32) {
        match self {
            RangeSensor::Lidar => (LIDAR_MIN_MM, LIDAR_MAX_MM),
            _ => (SONAR_MIN_MM, SONAR_MAX_MM),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeReading {
    pub sensor: RangeSensor,
    pub distance_mm: u32,
    pub max_range: bool,
}

/// Mount point and boresight of one sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorPose {
    pub position: LocalPoint,
    pub heading_rad: f64,
}

/// Distance from `p` to the nearest point of the disk `(c, r)` that lies
/// within `half_angle` of `heading`.
pub(crate) fn cone_distance(p: LocalPoint, heading: f64, half_angle: f64, c: LocalPoint, r: f64) -> Option<f64> {
    let dx = c.x_m - p.x_m;
    let dy = c.y_m - p.y_m;
    let d = dx.hypot(dy);
    if d <= r {
        return Some(0.0);
    }
    let off = wrap_angle(dy.atan2(dx) - heading);
    if off.abs() <= half_angle {
        return Some(d - r);
    }
    // outside the boresight cone the closest admissible point sits on an edge ray
    [-half_angle, half_angle]
        .into_iter()
        .filter_map(|e| {
            let (s, co) = (heading + e).sin_cos();
            ray_disk(p, (co, s), c, r)
        })
        .min_by(f64::total_cmp)
}

fn ray_disk(p: LocalPoint, dir: (f64, f64), c: LocalPoint, r: f64) -> Option<f64> {
    let ox = p.x_m - c.x_m;
    let oy = p.y_m - c.y_m;
    let b = ox * dir.0 + oy * dir.1;
    let cc = ox * ox + oy * oy - r * r;
    let disc = b * b - cc;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t >= 0.0).then_some(t)
}

pub fn wrap_angle(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut x = a % tau;
    if x > std::f64::consts::PI {
        x -= tau;
    } else if x <= -std::f64::consts::PI {
        x += tau;
    }
    x
}

/// Nearest physical entity seen by `sensor`: within a 15° half-angle cone
/// for the ultrasonic rangers, along a single ray for the LIDAR.
pub fn sample_range(world: &World, pose: &SensorPose, sensor: RangeSensor) -> RangeReading {
    let (min_mm, max_mm) = sensor.limits();
    let dir = (pose.heading_rad.cos(), pose.heading_rad.sin());
    let nearest = world
        .entities
        .iter()
        .filter(|e| e.is_physical())
        .filter_map(|e| match sensor {
            RangeSensor::Lidar => e.ray_hit_2d(pose.position, dir),
            _ => cone_distance(pose.position, pose.heading_rad, SONAR_HALF_ANGLE_RAD, e.position, e.radius_m),
        })
        .min_by(f64::total_cmp);
    match nearest {
        Some(d) if d * 1000.0 <= max_mm as f64 => {
            let mm = ((d * 1000.0).round() as u32).clamp(min_mm, max_mm);
            RangeReading { sensor, distance_mm: mm, max_range: false }
        }
        _ => RangeReading { sensor, distance_mm: max_mm, max_range: true },
    }
}

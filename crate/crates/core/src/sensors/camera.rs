//! Thermal and visual cameras.
//!
//! Both use the same pinhole model: normalized image coordinate `(cx, cy)`
//! maps to the ray `forward + (2cx−1)·t·right + (1−2cy)·t·up` with
//! `t = tan(fov/2)` on both axes, so detections can be projected back to
//! the ground with the same trigonometry.

use serde::{Deserialize, Serialize};

use crate::world::{along, dot, optical_depth, sub, LocalPoint, PoseView, World};

pub const THERMAL_W: usize = 32;
pub const THERMAL_H: usize = 24;
pub const VISUAL_W: usize = 64;
pub const VISUAL_H: usize = 48;
/// Pixels below this visibility report no identity.
pub const DETECTABILITY_FLOOR: f64 = 0.35;

const TEMP_MIN_DC: i32 = -400;
const TEMP_MAX_DC: i32 = 15_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub position: LocalPoint,
    pub forward: LocalPoint,
    pub right: LocalPoint,
    pub up: LocalPoint,
}

impl CameraPose {
    /// Straight down; image right is east and image top is north.
    pub fn nadir(position: LocalPoint) -> Self {
        CameraPose {
            position,
            forward: LocalPoint::new(0.0, 0.0, -1.0),
            right: LocalPoint::new(1.0, 0.0, 0.0),
            up: LocalPoint::new(0.0, 1.0, 0.0),
        }
    }

    /// Level camera looking along `heading_rad` (counter-clockwise from east).
    pub fn level(position: LocalPoint, heading_rad: f64) -> Self {
        let (s, c) = heading_rad.sin_cos();
        CameraPose {
            position,
            forward: LocalPoint::new(c, s, 0.0),
            right: LocalPoint::new(s, -c, 0.0),
            up: LocalPoint::new(0.0, 0.0, 1.0),
        }
    }

    fn ray(&self, cx: f64, cy: f64, tan_half: f64) -> LocalPoint {
        let u = (2.0 * cx - 1.0) * tan_half;
        let v = (1.0 - 2.0 * cy) * tan_half;
        let d = LocalPoint::new(
            self.forward.x_m + u * self.right.x_m + v * self.up.x_m,
            self.forward.y_m + u * self.right.y_m + v * self.up.y_m,
            self.forward.z_m + u * self.right.z_m + v * self.up.z_m,
        );
        let n = dot(d, d).sqrt();
        LocalPoint::new(d.x_m / n, d.y_m / n, d.z_m / n)
    }
}

fn pixel_center(i: usize, j: usize, w: usize, h: usize) -> (f64, f64) {
    ((i as f64 + 0.5) / w as f64, (j as f64 + 0.5) / h as f64)
}

fn check_fov(fov_deg: f64) -> f64 {
    assert!(fov_deg > 10.0 && fov_deg < 120.0, "camera fov {fov_deg}° outside (10, 120)");
    (fov_deg.to_radians() / 2.0).tan()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThermalFrame {
    pub w: usize,
    pub h: usize,
    /// Row-major, deci-°C.
    pub temps_dc: Vec<i32>,
}

impl ThermalFrame {
    pub fn at(&self, i: usize, j: usize) -> i32 {
        self.temps_dc[j * self.w + i]
    }

    pub fn center(&self) -> i32 {
        self.at(self.w / 2, self.h / 2)
    }

    pub fn max(&self) -> i32 {
        self.temps_dc.iter().copied().max().unwrap_or(TEMP_MIN_DC)
    }

    /// Hottest pixel as `(i, j, deci-°C)`, first in row-major order on ties.
    pub fn hottest(&self) -> (usize, usize, i32) {
        let (k, t) = self
            .temps_dc
            .iter()
            .copied()
            .enumerate()
            .fold((0, i32::MIN), |best, (k, t)| if t > best.1 { (k, t) } else { best });
        (k % self.w, k / self.w, t)
    }
}

pub fn capture_thermal(world: &World, pose: &CameraPose, fov_deg: f64) -> ThermalFrame {
    capture_thermal_sized(world, pose, fov_deg, THERMAL_W, THERMAL_H)
}

/// Each heat source whose sphere the pixel ray passes through adds
/// `(T − ambient)/(1 + d/radius)` where `d` is the camera-to-source distance.
/// Smoke is ignored.
pub fn capture_thermal_sized(world: &World, pose: &CameraPose, fov_deg: f64, w: usize, h: usize) -> ThermalFrame {
    let tan_half = check_fov(fov_deg);
    let mut temps_dc = Vec::with_capacity(w * h);
    for j in 0..h {
        for i in 0..w {
            let (cx, cy) = pixel_center(i, j, w, h);
            let dir = pose.ray(cx, cy, tan_half);
            let mut temp = world.ambient_c;
            for src in &world.heat_sources {
                let rel = sub(src.position, pose.position);
                let d = dot(rel, rel).sqrt();
                let t = dot(rel, dir);
                let hit = if d <= src.radius_m {
                    true
                } else if t < 0.0 {
                    false
                } else {
                    let perp2 = (d * d - t * t).max(0.0);
                    perp2 <= src.radius_m * src.radius_m
                };
                if hit {
                    temp += (src.temp_c - world.ambient_c) / (1.0 + d / src.radius_m);
                }
            }
            temps_dc.push(((temp * 10.0).round() as i32).clamp(TEMP_MIN_DC, TEMP_MAX_DC));
        }
    }
    ThermalFrame { w, h, temps_dc }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisualPixel {
    pub entity: Option<u16>,
    pub visibility: f64,
}

/// Ground truth carried alongside a frame for entities that are identifiable
/// in it; the detector reads labels from here instead of from pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSubject {
    pub entity_id: u16,
    pub label: String,
    pub pose_view: PoseView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualFrame {
    pub w: usize,
    pub h: usize,
    pub pixels: Vec<VisualPixel>,
    pub subjects: Vec<FrameSubject>,
}

impl VisualFrame {
    pub fn at(&self, i: usize, j: usize) -> VisualPixel {
        self.pixels[j * self.w + i]
    }

    pub fn center(&self) -> VisualPixel {
        self.at(self.w / 2, self.h / 2)
    }

    pub fn subject(&self, id: u16) -> Option<&FrameSubject> {
        self.subjects.iter().find(|s| s.entity_id == id)
    }

    /// Ids of entities with at least one identified pixel, ascending.
    pub fn visible_ids(&self) -> Vec<u16> {
        let mut ids: Vec<u16> = self.pixels.iter().filter_map(|p| p.entity).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// An empty frame of the given size: nothing in view, full visibility.
    pub fn empty(w: usize, h: usize) -> Self {
        VisualFrame { w, h, pixels: vec![VisualPixel { entity: None, visibility: 1.0 }; w * h], subjects: Vec::new() }
    }
}

pub fn capture_visual(world: &World, pose: &CameraPose, fov_deg: f64) -> VisualFrame {
    capture_visual_sized(world, pose, fov_deg, VISUAL_W, VISUAL_H)
}

pub fn capture_visual_sized(world: &World, pose: &CameraPose, fov_deg: f64, w: usize, h: usize) -> VisualFrame {
    let tan_half = check_fov(fov_deg);
    let mut pixels = Vec::with_capacity(w * h);
    for j in 0..h {
        for i in 0..w {
            let (cx, cy) = pixel_center(i, j, w, h);
            let dir = pose.ray(cx, cy, tan_half);
            let nearest = world
                .entities
                .iter()
                .filter(|e| e.is_physical())
                .filter_map(|e| e.ray_hit(pose.position, dir).map(|t| (t, e.id)))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let px = match nearest {
                None => VisualPixel { entity: None, visibility: 1.0 },
                Some((t, id)) => {
                    let hit = along(pose.position, dir, t);
                    let visibility = (-optical_depth(&world.smoke, pose.position, hit)).exp();
                    VisualPixel { entity: (visibility >= DETECTABILITY_FLOOR).then_some(id), visibility }
                }
            };
            pixels.push(px);
        }
    }
    let mut frame = VisualFrame { w, h, pixels, subjects: Vec::new() };
    frame.subjects = frame
        .visible_ids()
        .into_iter()
        .filter_map(|id| world.entity(id))
        .map(|e| FrameSubject { entity_id: e.id, label: e.label.clone(), pose_view: e.pose_view })
        .collect();
    frame
}

//! The simulated operations area: coordinates, smoke and heat fields, and
//! the entities every sensor and agent reads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius used by the local projection.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
/// Default half-width of the scenario area.
pub const DEFAULT_BOUND_M: f64 = 10_000.0;
pub const DEFAULT_AMBIENT_C: f64 = 20.0;

const E7: f64 = 1e7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error("coordinate out of domain: {0}")]
    CoordinateDomain(String),
    #[error("invalid smoke field: {0}")]
    SmokeField(String),
}

/// Fixed-point position: degrees × 10^7 and centimeters above local ground.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoFix {
    pub lat_e7: i32,
    pub lon_e7: i32,
    pub alt_cm: i32,
}

impl GeoFix {
    pub fn new(lat_e7: i32, lon_e7: i32, alt_cm: i32) -> Result<Self, WorldError> {
        let fix = GeoFix { lat_e7, lon_e7, alt_cm };
        fix.validate()?;
        Ok(fix)
    }

    pub fn from_degrees(lat: f64, lon: f64, alt_m: f64) -> Result<Self, WorldError> {
        if !(lat.is_finite() && lon.is_finite() && alt_m.is_finite()) {
            return Err(WorldError::CoordinateDomain("non-finite coordinate".into()));
        }
        let lat_e7 = (lat * E7).round();
        let lon_e7 = (lon * E7).round();
        let alt_cm = (alt_m * 100.0).round();
        if lat_e7.abs() > 90.0 * E7 || lon_e7.abs() > 180.0 * E7 || alt_cm > i32::MAX as f64 {
            return Err(WorldError::CoordinateDomain(format!("({lat}, {lon}, {alt_m})")));
        }
        Self::new(lat_e7 as i32, lon_e7 as i32, alt_cm as i32)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if self.lat_e7.unsigned_abs() > 900_000_000 {
            return Err(WorldError::CoordinateDomain(format!("lat_e7 {} outside ±90°", self.lat_e7)));
        }
        if self.lon_e7.unsigned_abs() > 1_800_000_000 {
            return Err(WorldError::CoordinateDomain(format!("lon_e7 {} outside ±180°", self.lon_e7)));
        }
        if self.alt_cm < 0 {
            return Err(WorldError::CoordinateDomain(format!("alt_cm {} below ground", self.alt_cm)));
        }
        Ok(())
    }

    pub fn lat_deg(&self) -> f64 {
        self.lat_e7 as f64 / E7
    }

    pub fn lon_deg(&self) -> f64 {
        self.lon_e7 as f64 / E7
    }

    /// Same horizontal position, on the ground.
    pub fn ground(&self) -> GeoFix {
        GeoFix { alt_cm: 0, ..*self }
    }

    /// Big-endian wire form: lat, lon, alt as three i32.
    pub fn to_bytes(&self) -> [u8; 12] {
        let mut out = [0u8; 12];
        out[0..4].copy_from_slice(&self.lat_e7.to_be_bytes());
        out[4..8].copy_from_slice(&self.lon_e7.to_be_bytes());
        out[8..12].copy_from_slice(&self.alt_cm.to_be_bytes());
        out
    }

    pub fn from_bytes(b: &[u8; 12]) -> Result<Self, WorldError> {
        let word = |i: usize| i32::from_be_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
        Self::new(word(0), word(4), word(8))
    }
}

/// Flat local frame: meters east, north and up of the scenario origin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalPoint {
    pub x_m: f64,
    pub y_m: f64,
    #[serde(default)]
    pub z_m: f64,
}

impl LocalPoint {
    pub const fn new(x_m: f64, y_m: f64, z_m: f64) -> Self {
        LocalPoint { x_m, y_m, z_m }
    }

    pub fn is_finite(&self) -> bool {
        self.x_m.is_finite() && self.y_m.is_finite() && self.z_m.is_finite()
    }

    pub fn horizontal_distance(&self, other: &LocalPoint) -> f64 {
        (self.x_m - other.x_m).hypot(self.y_m - other.y_m)
    }

    pub fn distance(&self, other: &LocalPoint) -> f64 {
        let d = sub(*other, *self);
        dot(d, d).sqrt()
    }

    pub fn offset(&self, dx: f64, dy: f64, dz: f64) -> LocalPoint {
        LocalPoint::new(self.x_m + dx, self.y_m + dy, self.z_m + dz)
    }
}

pub(crate) fn sub(a: LocalPoint, b: LocalPoint) -> LocalPoint {
    LocalPoint::new(a.x_m - b.x_m, a.y_m - b.y_m, a.z_m - b.z_m)
}

pub(crate) fn dot(a: LocalPoint, b: LocalPoint) -> f64 {
    a.x_m * b.x_m + a.y_m * b.y_m + a.z_m * b.z_m
}

pub(crate) fn along(origin: LocalPoint, dir: LocalPoint, t: f64) -> LocalPoint {
    LocalPoint::new(origin.x_m + dir.x_m * t, origin.y_m + dir.y_m * t, origin.z_m + dir.z_m * t)
}

/// Equirectangular projection of `fix` about `origin`.
pub fn geo_to_local(fix: GeoFix, origin: GeoFix) -> Result<LocalPoint, WorldError> {
    fix.validate()?;
    origin.validate()?;
    let dlat_e7 = fix.lat_e7 as i64 - origin.lat_e7 as i64;
    if dlat_e7.unsigned_abs() >= E7 as u64 {
        return Err(WorldError::CoordinateDomain(format!(
            "latitude difference {:.7}° exceeds projection limit of 1°",
            dlat_e7 as f64 / E7
        )));
    }
    let mut dlon_e7 = fix.lon_e7 as i64 - origin.lon_e7 as i64;
    // antimeridian
    if dlon_e7 > 1_800_000_000 {
        dlon_e7 -= 3_600_000_000;
    } else if dlon_e7 < -1_800_000_000 {
        dlon_e7 += 3_600_000_000;
    }
    let k = std::f64::consts::PI / 180.0 * EARTH_RADIUS_M / E7;
    let cos_lat = origin.lat_deg().to_radians().cos();
    Ok(LocalPoint {
        x_m: dlon_e7 as f64 * k * cos_lat,
        y_m: dlat_e7 as f64 * k,
        z_m: fix.alt_cm as f64 / 100.0,
    })
}

/// Inverse of [`geo_to_local`], rounded to the fixed-point grid.
pub fn local_to_geo(p: LocalPoint, origin: GeoFix) -> Result<GeoFix, WorldError> {
    origin.validate()?;
    if !p.is_finite() {
        return Err(WorldError::CoordinateDomain("non-finite local point".into()));
    }
    let k = std::f64::consts::PI / 180.0 * EARTH_RADIUS_M / E7;
    let cos_lat = origin.lat_deg().to_radians().cos();
    if cos_lat <= 1e-9 {
        return Err(WorldError::CoordinateDomain("origin at a pole".into()));
    }
    let lat = origin.lat_e7 as f64 + (p.y_m / k).round();
    let mut lon = origin.lon_e7 as f64 + (p.x_m / (k * cos_lat)).round();
    if lon > 1_800_000_000.0 {
        lon -= 3_600_000_000.0;
    } else if lon < -1_800_000_000.0 {
        lon += 3_600_000_000.0;
    }
    let alt = (p.z_m * 100.0).round();
    if lat.abs() > 900_000_000.0 || alt < 0.0 || alt > i32::MAX as f64 {
        return Err(WorldError::CoordinateDomain(format!("local point {p:?} leaves the coordinate domain")));
    }
    GeoFix::new(lat as i32, lon as i32, alt as i32)
}

/// Static smoke density grid. Row 0 is the southernmost row; cell `(i, j)`
/// is centered at `origin + ((i + 0.5)·cell_m, (j + 0.5)·cell_m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmokeField {
    pub cell_m: f64,
    #[serde(default = "SmokeField::default_origin")]
    pub origin: [f64; 2],
    pub rows: Vec<Vec<f64>>,
}

impl SmokeField {
    fn default_origin() -> [f64; 2] {
        [0.0, 0.0]
    }

    pub fn new(cell_m: f64, origin: [f64; 2], rows: Vec<Vec<f64>>) -> Result<Self, WorldError> {
        let f = SmokeField { cell_m, origin, rows };
        f.validate()?;
        Ok(f)
    }

    pub fn uniform(cell_m: f64, origin: [f64; 2], nx: usize, ny: usize, density: f64) -> Result<Self, WorldError> {
        Self::new(cell_m, origin, vec![vec![density; nx]; ny])
    }

    /// A 1×1 zero field: open air everywhere.
    pub fn clear() -> Self {
        SmokeField { cell_m: 1.0, origin: [0.0, 0.0], rows: vec![vec![0.0]] }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if !(self.cell_m.is_finite() && self.cell_m > 0.0) {
            return Err(WorldError::SmokeField(format!("cell_m must be > 0, got {}", self.cell_m)));
        }
        if self.rows.is_empty() || self.rows[0].is_empty() {
            return Err(WorldError::SmokeField("grid must be at least 1×1".into()));
        }
        let nx = self.rows[0].len();
        for (j, row) in self.rows.iter().enumerate() {
            if row.len() != nx {
                return Err(WorldError::SmokeField(format!("row {j} has {} cells, expected {nx}", row.len())));
            }
            if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(WorldError::SmokeField(format!("row {j} holds invalid density {v}")));
            }
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        self.rows[0].len()
    }

    pub fn ny(&self) -> usize {
        self.rows.len()
    }

    pub fn extent(&self) -> ([f64; 2], [f64; 2]) {
        let [x0, y0] = self.origin;
        (self.origin, [x0 + self.nx() as f64 * self.cell_m, y0 + self.ny() as f64 * self.cell_m])
    }

    pub fn max_density(&self) -> f64 {
        self.rows.iter().flatten().copied().fold(0.0, f64::max)
    }
}

fn bracket(g: f64, n: usize) -> (usize, usize, f64) {
    if g <= 0.0 {
        return (0, 0, 0.0);
    }
    let last = n - 1;
    let i0 = (g.floor() as usize).min(last);
    if i0 == last {
        return (last, last, 0.0);
    }
    (i0, i0 + 1, g - i0 as f64)
}

/// Bilinear interpolation between cell centers; zero outside the grid.
pub fn smoke_density_at(field: &SmokeField, p: LocalPoint) -> f64 {
    let ([x0, y0], [x1, y1]) = field.extent();
    if !(p.x_m >= x0 && p.x_m <= x1 && p.y_m >= y0 && p.y_m <= y1) {
        return 0.0;
    }
    let gx = (p.x_m - x0) / field.cell_m - 0.5;
    let gy = (p.y_m - y0) / field.cell_m - 0.5;
    let (i0, i1, fx) = bracket(gx, field.nx());
    let (j0, j1, fy) = bracket(gy, field.ny());
    let r0 = &field.rows[j0];
    let r1 = &field.rows[j1];
    let south = r0[i0] + (r0[i1] - r0[i0]) * fx;
    let north = r1[i0] + (r1[i1] - r1[i0]) * fx;
    (south + (north - south) * fy).max(0.0)
}

/// Midpoint-rule line integral of density from `a` to `b`, with a step no
/// longer than a quarter cell.
pub fn optical_depth(field: &SmokeField, a: LocalPoint, b: LocalPoint) -> f64 {
    let len = a.distance(&b);
    if len == 0.0 {
        return 0.0;
    }
    let step = field.cell_m / 4.0;
    let n = (len / step).ceil().max(1.0) as usize;
    let h = 1.0 / n as f64;
    let d = sub(b, a);
    let sum: f64 = (0..n)
        .map(|k| {
            // symmetric sample positions so the integral is direction-independent
            let s = (k as f64 + 0.5) * h;
            let p = if s <= 0.5 { along(a, d, s) } else { along(b, d, s - 1.0) };
            smoke_density_at(field, p)
        })
        .sum();
    sum * len * h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatSource {
    pub position: LocalPoint,
    pub temp_c: f64,
    pub radius_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityKind {
    Target,
    Obstacle,
    Drone,
    Retriever,
    BaseStation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum PoseView {
    Front,
    Side,
    #[default]
    None,
}

fn default_radius() -> f64 {
    0.3
}

fn default_height() -> f64 {
    0.5
}

fn default_mass() -> u32 {
    500
}

/// A physical thing in the scene. Targets and obstacles are upright
/// cylinders standing on the ground.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entity {
    pub id: u16,
    pub kind: EntityKind,
    pub position: LocalPoint,
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub pose_view: PoseView,
    #[serde(default = "default_radius")]
    pub radius_m: f64,
    #[serde(default = "default_height")]
    pub height_m: f64,
    #[serde(default = "default_mass")]
    pub mass_g: u32,
}

impl Entity {
    pub fn new(id: u16, kind: EntityKind, position: LocalPoint, label: &str) -> Self {
        Entity {
            id,
            kind,
            position,
            label: label.to_string(),
            pose_view: PoseView::None,
            radius_m: default_radius(),
            height_m: default_height(),
            mass_g: default_mass(),
        }
    }

    pub fn with_radius(mut self, radius_m: f64) -> Self {
        self.radius_m = radius_m;
        self
    }

    pub fn with_pose(mut self, pose: PoseView) -> Self {
        self.pose_view = pose;
        self
    }

    /// Solid things that cameras and rangers can hit.
    pub fn is_physical(&self) -> bool {
        matches!(self.kind, EntityKind::Target | EntityKind::Obstacle)
    }

    /// Nearest non-negative ray parameter at which a unit-direction ray hits
    /// the cylinder (side wall or top cap).
    pub fn ray_hit(&self, origin: LocalPoint, dir: LocalPoint) -> Option<f64> {
        let base = self.position.z_m;
        let top = base + self.height_m;
        let r2 = self.radius_m * self.radius_m;
        let ox = origin.x_m - self.position.x_m;
        let oy = origin.y_m - self.position.y_m;
        let inside_z = |t: f64| {
            let z = origin.z_m + dir.z_m * t;
            z >= base - 1e-12 && z <= top + 1e-12
        };
        let mut best: Option<f64> = None;
        let mut keep = |t: f64| {
            if t >= 0.0 && best.is_none_or(|b| t < b) {
                best = Some(t);
            }
        };
        if ox * ox + oy * oy <= r2 && origin.z_m >= base && origin.z_m <= top {
            return Some(0.0);
        }
        let a = dir.x_m * dir.x_m + dir.y_m * dir.y_m;
        if a > 1e-15 {
            let b = 2.0 * (ox * dir.x_m + oy * dir.y_m);
            let c = ox * ox + oy * oy - r2;
            let disc = b * b - 4.0 * a * c;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                    if inside_z(t) {
                        keep(t);
                    }
                }
            }
        }
        if dir.z_m.abs() > 1e-15 {
            for plane in [top, base] {
                let t = (plane - origin.z_m) / dir.z_m;
                let x = ox + dir.x_m * t;
                let y = oy + dir.y_m * t;
                if x * x + y * y <= r2 {
                    keep(t);
                }
            }
        }
        best
    }

    /// Horizontal-plane version of [`Entity::ray_hit`]: the ray's height is
    /// ignored. `dir` is a unit vector in the x/y plane.
    pub fn ray_hit_2d(&self, origin: LocalPoint, dir: (f64, f64)) -> Option<f64> {
        let ox = origin.x_m - self.position.x_m;
        let oy = origin.y_m - self.position.y_m;
        let r2 = self.radius_m * self.radius_m;
        let c = ox * ox + oy * oy - r2;
        if c <= 0.0 {
            return Some(0.0);
        }
        let b = ox * dir.0 + oy * dir.1;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let t = -b - disc.sqrt();
        (t >= 0.0).then_some(t)
    }
}

/// Immutable per-tick snapshot of everything sensors can observe.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub bounds_m: f64,
    pub ambient_c: f64,
    pub smoke: SmokeField,
    pub heat_sources: Vec<HeatSource>,
    pub entities: Vec<Entity>,
}

impl Default for World {
    fn default() -> Self {
        World {
            bounds_m: DEFAULT_BOUND_M,
            ambient_c: DEFAULT_AMBIENT_C,
            smoke: SmokeField::clear(),
            heat_sources: Vec::new(),
            entities: Vec::new(),
        }
    }
}

impl World {
    pub fn entity(&self, id: u16) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn in_bounds(&self, p: &LocalPoint) -> bool {
        p.x_m.abs() <= self.bounds_m && p.y_m.abs() <= self.bounds_m
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        self.smoke.validate()?;
        let mut ids: Vec<u16> = self.entities.iter().map(|e| e.id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(WorldError::CoordinateDomain(format!("duplicate entity id {}", w[0])));
        }
        for e in &self.entities {
            if !e.position.is_finite() || (e.is_physical() && !self.in_bounds(&e.position)) {
                return Err(WorldError::CoordinateDomain(format!("entity {} outside scenario bounds", e.id)));
            }
            if !(e.radius_m > 0.0 && e.height_m > 0.0) {
                return Err(WorldError::CoordinateDomain(format!("entity {} has non-positive size", e.id)));
            }
        }
        for (i, h) in self.heat_sources.iter().enumerate() {
            if !(h.radius_m > 0.0) || !(h.temp_c > self.ambient_c) {
                return Err(WorldError::CoordinateDomain(format!(
                    "heat source {i}: needs radius > 0 and temperature above ambient"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn origin() -> GeoFix {
        GeoFix::from_degrees(37.0, -122.0, 0.0).unwrap()
    }

    #[test]
    fn origin_maps_to_zero() {
        let p = geo_to_local(origin(), origin()).unwrap();
        assert_eq!(p, LocalPoint::new(0.0, 0.0, 0.0));
    }

    #[test]
    fn one_millidegree_east_at_37n() {
        let fix = GeoFix::from_degrees(37.0, -121.999, 0.0).unwrap();
        let p = geo_to_local(fix, origin()).unwrap();
        assert!((p.x_m - 88.8).abs() <= 0.2, "{}", p.x_m);
        assert_eq!(p.y_m, 0.0);
    }

    #[test]
    fn altitude_converts_to_meters() {
        let fix = GeoFix { alt_cm: 150, ..origin() };
        assert_eq!(geo_to_local(fix, origin()).unwrap().z_m, 1.5);
    }

    #[test]
    fn out_of_range_fix_rejected() {
        assert!(matches!(GeoFix::new(900_000_001, 0, 0), Err(WorldError::CoordinateDomain(_))));
        assert!(GeoFix::new(0, -1_800_000_001, 0).is_err());
        assert!(GeoFix::new(0, 0, -1).is_err());
        let bad = GeoFix { lat_e7: 950_000_000, lon_e7: 0, alt_cm: 0 };
        assert!(geo_to_local(bad, origin()).is_err());
        let far = GeoFix::from_degrees(38.5, -122.0, 0.0).unwrap();
        assert!(geo_to_local(far, origin()).is_err());
    }

    #[test]
    fn geofix_bytes_roundtrip() {
        let f = GeoFix::new(-337_123_456, 1_512_345_678, 4200).unwrap();
        assert_eq!(GeoFix::from_bytes(&f.to_bytes()).unwrap(), f);
    }

    #[test]
    fn density_examples() {
        let zero = SmokeField::uniform(2.0, [0.0, 0.0], 4, 4, 0.0).unwrap();
        assert_eq!(smoke_density_at(&zero, LocalPoint::new(3.3, 1.1, 0.0)), 0.0);
        let half = SmokeField::uniform(2.0, [0.0, 0.0], 4, 4, 0.5).unwrap();
        for p in [(0.1, 0.1), (3.3, 7.9), (4.0, 4.0)] {
            assert_eq!(smoke_density_at(&half, LocalPoint::new(p.0, p.1, 0.0)), 0.5);
        }
        let ramp = SmokeField::new(1.0, [0.0, 0.0], vec![vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert!((smoke_density_at(&ramp, LocalPoint::new(1.0, 1.0, 0.0)) - 0.5).abs() < 1e-15);
        // exact at centers
        assert_eq!(smoke_density_at(&ramp, LocalPoint::new(1.5, 0.5, 0.0)), 1.0);
        assert_eq!(smoke_density_at(&ramp, LocalPoint::new(0.5, 1.5, 0.0)), 0.0);
        // open air outside the grid
        assert_eq!(smoke_density_at(&half, LocalPoint::new(-0.1, 1.0, 0.0)), 0.0);
    }

    #[test]
    fn invalid_fields_rejected() {
        assert!(SmokeField::new(1.0, [0.0, 0.0], vec![]).is_err());
        assert!(SmokeField::new(0.0, [0.0, 0.0], vec![vec![0.0]]).is_err());
        assert!(SmokeField::new(1.0, [0.0, 0.0], vec![vec![-0.1]]).is_err());
        assert!(SmokeField::new(1.0, [0.0, 0.0], vec![vec![0.0, 1.0], vec![0.0]]).is_err());
    }

    #[test]
    fn optical_depth_examples() {
        let f = SmokeField::uniform(1.0, [-50.0, -50.0], 100, 100, 0.2).unwrap();
        let a = LocalPoint::new(0.0, 0.0, 0.0);
        assert_eq!(optical_depth(&f, a, a), 0.0);
        let od = optical_depth(&f, a, LocalPoint::new(6.0, 8.0, 0.0));
        assert!((od - 2.0).abs() <= 0.05, "{od}");
        let z = SmokeField::uniform(1.0, [-50.0, -50.0], 100, 100, 0.0).unwrap();
        assert_eq!(optical_depth(&z, a, LocalPoint::new(3.0, -7.0, 1.0)), 0.0);
    }

    #[test]
    fn cylinder_hits() {
        let e = Entity::new(1, EntityKind::Obstacle, LocalPoint::new(5.0, 0.0, 0.0), "rock").with_radius(1.0);
        let t = e.ray_hit(LocalPoint::new(0.0, 0.0, 0.2), LocalPoint::new(1.0, 0.0, 0.0)).unwrap();
        assert!((t - 4.0).abs() < 1e-12);
        // from above, straight down onto the cap
        let t = e.ray_hit(LocalPoint::new(5.0, 0.0, 10.0), LocalPoint::new(0.0, 0.0, -1.0)).unwrap();
        assert!((t - 9.5).abs() < 1e-12);
        // passes over the top
        assert!(e.ray_hit(LocalPoint::new(0.0, 0.0, 2.0), LocalPoint::new(1.0, 0.0, 0.0)).is_none());
        let t = e.ray_hit_2d(LocalPoint::new(0.0, 0.0, 0.0), (1.0, 0.0)).unwrap();
        assert!((t - 4.0).abs() < 1e-12);
        assert!(e.ray_hit_2d(LocalPoint::new(0.0, 0.0, 0.0), (-1.0, 0.0)).is_none());
    }

    fn arb_field() -> impl Strategy<Value = SmokeField> {
        (1usize..6, 1usize..6, 0.5f64..4.0).prop_flat_map(|(nx, ny, cell)| {
            prop::collection::vec(prop::collection::vec(0.0f64..3.0, nx), ny)
                .prop_map(move |rows| SmokeField::new(cell, [-5.0, -5.0], rows).unwrap())
        })
    }

    proptest! {
        #[test]
        fn projection_roundtrip_within_1cm(x in -10_000.0f64..10_000.0, y in -10_000.0f64..10_000.0, z in 0.0f64..500.0,
                                           lat in -60.0f64..60.0, lon in -179.0f64..179.0) {
            let o = GeoFix::from_degrees(lat, lon, 0.0).unwrap();
            let p = LocalPoint::new(x, y, z);
            let back = geo_to_local(local_to_geo(p, o).unwrap(), o).unwrap();
            prop_assert!(p.distance(&back) < 0.01, "{:?} vs {:?}", p, back);
        }

        #[test]
        fn optical_depth_symmetric(f in arb_field(), ax in -8.0f64..20.0, ay in -8.0f64..20.0, bx in -8.0f64..20.0, by in -8.0f64..20.0) {
            let a = LocalPoint::new(ax, ay, 0.0);
            let b = LocalPoint::new(bx, by, 1.0);
            let ab = optical_depth(&f, a, b);
            let ba = optical_depth(&f, b, a);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1e-300), "{} vs {}", ab, ba);
        }

        #[test]
        fn density_bounded_by_neighbours(f in arb_field(), u in 0.0f64..1.0, v in 0.0f64..1.0) {
            let ([x0, y0], [x1, y1]) = f.extent();
            let p = LocalPoint::new(x0 + u * (x1 - x0), y0 + v * (y1 - y0), 0.0);
            let d = smoke_density_at(&f, p);
            let gx = (p.x_m - x0) / f.cell_m - 0.5;
            let gy = (p.y_m - y0) / f.cell_m - 0.5;
            let (i0, i1, _) = bracket(gx, f.nx());
            let (j0, j1, _) = bracket(gy, f.ny());
            let corners = [f.rows[j0][i0], f.rows[j0][i1], f.rows[j1][i0], f.rows[j1][i1]];
            let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(d >= lo - 1e-12 && d <= hi + 1e-12);
        }
    }
}

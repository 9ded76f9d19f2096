//! Target identification and localization.
//!
//! [`Detector`] is the seam a real vision backend would plug into. The
//! shipped [`SimulatedDetector`] reads the semantic frames the cameras
//! produce and reproduces the observed behavior of the field system: a
//! uniform confidence band, pose-dependent label confusion, and occasional
//! false positives.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, stream_rng};
use crate::sensors::VisualFrame;
use crate::world::{local_to_geo, GeoFix, LocalPoint, PoseView};

/// Normalized image box: center and size, all in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn within_unit(&self) -> bool {
        let lo = |c: f64, s: f64| c - s / 2.0 >= -1e-12;
        let hi = |c: f64, s: f64| c + s / 2.0 <= 1.0 + 1e-12;
        lo(self.cx, self.w) && hi(self.cx, self.w) && lo(self.cy, self.h) && hi(self.cy, self.h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub confidence: f64,
    pub bbox: Option<BBox>,
    pub geo: Option<GeoFix>,
    /// Entity behind the detection; `None` for false positives.
    pub entity_id: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusionRule {
    pub true_label: String,
    pub pose_view: PoseView,
    pub confused_as: String,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub conf_low: f64,
    pub conf_high: f64,
    pub confusion_rules: Vec<ConfusionRule>,
    /// Probability of one false positive per located frame.
    pub fp_rate: f64,
    /// Labels false positives are drawn from.
    pub labels: Vec<String>,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            conf_low: 0.60,
            conf_high: 0.95,
            confusion_rules: Vec::new(),
            fp_rate: 0.1,
            labels: ["dog", "person", "fire", "fire-engine", "ambulance", "moving-van"].map(String::from).to_vec(),
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 <= self.conf_low && self.conf_low <= self.conf_high && self.conf_high <= 1.0) {
            return Err(format!("need 0 ≤ conf_low ≤ conf_high ≤ 1, got {}..{}", self.conf_low, self.conf_high));
        }
        if !(0.0..=1.0).contains(&self.fp_rate) {
            return Err(format!("fp_rate must be in [0, 1], got {}", self.fp_rate));
        }
        if let Some(r) = self.confusion_rules.iter().find(|r| !(0.0..=1.0).contains(&r.prob)) {
            return Err(format!("confusion rule for {:?} has prob {} outside [0, 1]", r.true_label, r.prob));
        }
        if self.fp_rate > 0.0 && self.labels.is_empty() {
            return Err("false positives enabled with an empty label set".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeolocateError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("invalid box: {0:?}")]
    InvalidBox(BBox),
    #[error(transparent)]
    Coordinates(#[from] crate::world::WorldError),
}

/// Pluggable recognition backend.
pub trait Detector {
    /// Labels and confidences for entities in view; no boxes.
    fn identify(&self, frame: &VisualFrame, tick: u64) -> Vec<Detection>;
    /// Labelled boxes for entities in view, possibly with false positives.
    fn locate(&self, frame: &VisualFrame, tick: u64) -> Vec<Detection>;
}

#[derive(Debug, Clone, Default)]
pub struct SimulatedDetector {
    pub cfg: DetectorConfig,
}

impl SimulatedDetector {
    pub fn new(cfg: DetectorConfig) -> Self {
        SimulatedDetector { cfg }
    }
}

impl Detector for SimulatedDetector {
    fn identify(&self, frame: &VisualFrame, tick: u64) -> Vec<Detection> {
        identify(frame, &self.cfg, tick)
    }

    fn locate(&self, frame: &VisualFrame, tick: u64) -> Vec<Detection> {
        locate(frame, &self.cfg, tick)
    }
}

/// Label and confidence for one entity. Draws are keyed by entity id so
/// `identify` and `locate` agree on the same frame and tick.
fn recognise(frame: &VisualFrame, id: u16, cfg: &DetectorConfig, tick: u64) -> (String, f64) {
    let mut rng = stream_rng(cfg.seed, tick, stream::DETECT, id as u64);
    let confusion_draw: f64 = rng.gen();
    let conf_draw: f64 = rng.gen();
    let confidence = cfg.conf_low + (cfg.conf_high - cfg.conf_low) * conf_draw;
    let (truth, pose) = match frame.subject(id) {
        Some(s) => (s.label.as_str(), s.pose_view),
        None => ("unknown", PoseView::None),
    };
    let label = cfg
        .confusion_rules
        .iter()
        .find(|r| r.true_label == truth && r.pose_view == pose)
        .filter(|r| confusion_draw < r.prob)
        .map_or(truth, |r| r.confused_as.as_str());
    (label.to_string(), confidence)
}

pub fn identify(frame: &VisualFrame, cfg: &DetectorConfig, tick: u64) -> Vec<Detection> {
    frame
        .visible_ids()
        .into_iter()
        .map(|id| {
            let (label, confidence) = recognise(frame, id, cfg, tick);
            Detection { label, confidence, bbox: None, geo: None, entity_id: Some(id) }
        })
        .collect()
}

/// Tight normalized box around the entity's identified pixels, grown by 5%.
pub fn footprint_box(frame: &VisualFrame, id: u16) -> Option<BBox> {
    let (mut i0, mut i1, mut j0, mut j1) = (usize::MAX, 0, usize::MAX, 0);
    for j in 0..frame.h {
        for i in 0..frame.w {
            if frame.at(i, j).entity == Some(id) {
                i0 = i0.min(i);
                i1 = i1.max(i);
                j0 = j0.min(j);
                j1 = j1.max(j);
            }
        }
    }
    if i0 == usize::MAX {
        return None;
    }
    let (x0, x1) = (i0 as f64 / frame.w as f64, (i1 + 1) as f64 / frame.w as f64);
    let (y0, y1) = (j0 as f64 / frame.h as f64, (j1 + 1) as f64 / frame.h as f64);
    Some(dilate(BBox { cx: (x0 + x1) / 2.0, cy: (y0 + y1) / 2.0, w: x1 - x0, h: y1 - y0 }, 0.05))
}

fn dilate(b: BBox, frac: f64) -> BBox {
    let clip = |c: f64, s: f64| {
        let lo = (c - s * (1.0 + frac) / 2.0).max(0.0);
        let hi = (c + s * (1.0 + frac) / 2.0).min(1.0);
        ((lo + hi) / 2.0, hi - lo)
    };
    let (cx, w) = clip(b.cx, b.w);
    let (cy, h) = clip(b.cy, b.h);
    BBox { cx, cy, w, h }
}

pub fn locate(frame: &VisualFrame, cfg: &DetectorConfig, tick: u64) -> Vec<Detection> {
    let mut out: Vec<Detection> = frame
        .visible_ids()
        .into_iter()
        .filter_map(|id| {
            let bbox = footprint_box(frame, id)?;
            let (label, confidence) = recognise(frame, id, cfg, tick);
            Some(Detection { label, confidence, bbox: Some(bbox), geo: None, entity_id: Some(id) })
        })
        .collect();
    let mut rng = stream_rng(cfg.seed, tick, stream::FALSE_POSITIVE, 0);
    let fires: f64 = rng.gen();
    if fires < cfg.fp_rate && !cfg.labels.is_empty() {
        let label = cfg.labels[rng.gen_range(0..cfg.labels.len())].clone();
        let w = rng.gen_range(0.05..0.3);
        let h = rng.gen_range(0.05..0.3);
        let cx = rng.gen_range(w / 2.0..=1.0 - w / 2.0);
        let cy = rng.gen_range(h / 2.0..=1.0 - h / 2.0);
        let confidence = cfg.conf_low + (cfg.conf_high - cfg.conf_low) * rng.gen::<f64>();
        out.push(Detection { label, confidence, bbox: Some(BBox { cx, cy, w, h }), geo: None, entity_id: None });
    }
    out
}

/// Ground-plane offset `(east, north)` in meters of a box center seen by a
/// nadir camera at `alt_m` with field of view `fov_deg` on both axes.
pub fn ground_offset(b: &BBox, alt_m: f64, fov_deg: f64) -> (f64, f64) {
    let t = (fov_deg.to_radians() / 2.0).tan();
    (alt_m * t * (2.0 * b.cx - 1.0), alt_m * t * (1.0 - 2.0 * b.cy))
}

/// Projects a detection onto the ground below a nadir-pointing drone.
/// The result sits on the ground (`alt_cm = 0`).
pub fn geolocate(det: &Detection, drone_fix: GeoFix, drone_alt_cm: i32, fov_deg: f64) -> Result<GeoFix, GeolocateError> {
    if drone_alt_cm <= 0 {
        return Err(GeolocateError::DegenerateGeometry(format!("camera altitude {drone_alt_cm} cm")));
    }
    if !(fov_deg > 0.0 && fov_deg < 180.0) {
        return Err(GeolocateError::DegenerateGeometry(format!("field of view {fov_deg}°")));
    }
    let b = det.bbox.ok_or(GeolocateError::DegenerateGeometry("detection has no box".into()))?;
    if !(0.0..=1.0).contains(&b.cx) || !(0.0..=1.0).contains(&b.cy) {
        return Err(GeolocateError::InvalidBox(b));
    }
    let (east, north) = ground_offset(&b, drone_alt_cm as f64 / 100.0, fov_deg);
    Ok(local_to_geo(LocalPoint::new(east, north, 0.0), drone_fix.ground())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensors::{FrameSubject, VisualPixel};
    use crate::world::geo_to_local;

    fn frame_with(id: u16, label: &str, pose: PoseView, fill: (usize, usize, usize, usize)) -> VisualFrame {
        let mut f = VisualFrame::empty(20, 20);
        for j in fill.2..fill.3 {
            for i in fill.0..fill.1 {
                f.pixels[j * 20 + i] = VisualPixel { entity: Some(id), visibility: 1.0 };
            }
        }
        f.subjects.push(FrameSubject { entity_id: id, label: label.into(), pose_view: pose });
        f
    }

    fn no_fp() -> DetectorConfig {
        DetectorConfig { fp_rate: 0.0, ..DetectorConfig::default() }
    }

    #[test]
    fn identifies_visible_dog_in_band() {
        let f = frame_with(1, "dog", PoseView::Side, (5, 8, 5, 8));
        let d = identify(&f, &no_fp(), 3);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].label, "dog");
        assert!((0.60..=0.95).contains(&d[0].confidence));
        assert!(d[0].bbox.is_none());
    }

    #[test]
    fn front_view_confusion() {
        let mut cfg = no_fp();
        cfg.confusion_rules.push(ConfusionRule {
            true_label: "fire-engine".into(),
            pose_view: PoseView::Front,
            confused_as: "ambulance".into(),
            prob: 1.0,
        });
        let front = frame_with(2, "fire-engine", PoseView::Front, (0, 4, 0, 4));
        assert_eq!(identify(&front, &cfg, 0)[0].label, "ambulance");
        let side = frame_with(2, "fire-engine", PoseView::Side, (0, 4, 0, 4));
        assert_eq!(identify(&side, &cfg, 0)[0].label, "fire-engine");
    }

    #[test]
    fn occluded_frame_is_empty() {
        let mut f = VisualFrame::empty(10, 10);
        for p in f.pixels.iter_mut() {
            p.visibility = 0.05;
        }
        assert!(identify(&f, &no_fp(), 0).is_empty());
        assert!(locate(&f, &no_fp(), 0).is_empty());
    }

    #[test]
    fn box_dilated_five_percent() {
        let f = frame_with(1, "dog", PoseView::None, (8, 12, 8, 12));
        let d = locate(&f, &no_fp(), 0);
        let b = d[0].bbox.unwrap();
        for (got, want) in [(b.cx, 0.5), (b.cy, 0.5), (b.w, 0.21), (b.h, 0.21)] {
            assert!((got - want).abs() < 1e-12, "{b:?}");
        }
    }

    #[test]
    fn dilation_clipped_at_edges() {
        let f = frame_with(1, "dog", PoseView::None, (0, 20, 0, 3));
        let b = locate(&f, &no_fp(), 0)[0].bbox.unwrap();
        assert!(b.within_unit());
        assert!((b.w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forced_false_positive() {
        let cfg = DetectorConfig { fp_rate: 1.0, ..DetectorConfig::default() };
        for tick in 0..50 {
            let d = locate(&VisualFrame::empty(8, 8), &cfg, tick);
            assert_eq!(d.len(), 1);
            assert!(cfg.labels.contains(&d[0].label));
            assert!(d[0].bbox.unwrap().within_unit());
            assert_eq!(d[0].entity_id, None);
        }
    }

    #[test]
    fn identify_and_locate_agree() {
        let f = frame_with(4, "person", PoseView::None, (2, 6, 2, 6));
        let a = identify(&f, &no_fp(), 17);
        let b = locate(&f, &no_fp(), 17);
        assert_eq!((a[0].label.as_str(), a[0].confidence), (b[0].label.as_str(), b[0].confidence));
    }

    fn det(cx: f64, cy: f64) -> Detection {
        Detection { label: "dog".into(), confidence: 0.9, bbox: Some(BBox { cx, cy, w: 0.1, h: 0.1 }), geo: None, entity_id: None }
    }

    #[test]
    fn ground_offsets() {
        let (e, n) = ground_offset(&det(0.5, 0.5).bbox.unwrap(), 10.0, 90.0);
        assert_eq!((e, n), (0.0, 0.0));
        let (e, n) = ground_offset(&det(1.0, 0.5).bbox.unwrap(), 10.0, 90.0);
        assert!((e - 10.0).abs() < 1e-9 && n.abs() < 1e-9);
        let (e, n) = ground_offset(&det(0.5, 0.0).bbox.unwrap(), 10.0, 90.0);
        assert!(e.abs() < 1e-9 && (n - 10.0).abs() < 1e-9);
    }

    #[test]
    fn geolocate_centered_is_ground_point() {
        let drone = GeoFix::new(370_000_000, -1_220_000_000, 1000).unwrap();
        assert_eq!(geolocate(&det(0.5, 0.5), drone, 1000, 90.0).unwrap(), drone.ground());
        let g = geolocate(&det(1.0, 0.5), drone, 1000, 90.0).unwrap();
        let p = geo_to_local(g, drone.ground()).unwrap();
        assert!((p.x_m - 10.0).abs() < 0.01 && p.y_m.abs() < 0.01);
    }

    #[test]
    fn zero_altitude_is_degenerate() {
        let drone = GeoFix::new(0, 0, 0).unwrap();
        assert!(matches!(geolocate(&det(0.5, 0.5), drone, 0, 90.0), Err(GeolocateError::DegenerateGeometry(_))));
    }

    #[test]
    fn offsets_scale_with_altitude() {
        for (cx, cy) in [(0.1, 0.9), (0.73, 0.2), (0.5, 0.0)] {
            let b = det(cx, cy).bbox.unwrap();
            let (e1, n1) = ground_offset(&b, 7.0, 60.0);
            let (e2, n2) = ground_offset(&b, 14.0, 60.0);
            assert!((e2 - 2.0 * e1).abs() < 1e-12 && (n2 - 2.0 * n1).abs() < 1e-12);
        }
    }
}

//! Spectral water-quality analysis: the blue-to-yellow response ratio,
//! its threshold classifier, sensor calibration selection and time-series
//! monitoring.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_THRESHOLD: f64 = 1.3;
/// Readings at or below this are treated as a dark or dead sensor.
pub const DARK_GUARD_V: f64 = 0.05;
pub const MIN_REPEATS: usize = 3;
const SCORE_EPS: f64 = 1e-6;

pub const SERIES_HEADER: [&str; 6] = ["sample_id", "t_hours", "red_v", "green_v", "blue_v", "yellow_v"];
pub const CALIBRATION_HEADER: [&str; 9] =
    ["ldr_mm", "tuning_ohms", "source_distance_cm", "sample_id", "t_hours", "red_v", "green_v", "blue_v", "yellow_v"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TurbidityError {
    #[error("degenerate reference: {which} reads {volts} V (guard {DARK_GUARD_V} V)")]
    DegenerateReference { which: &'static str, volts: f64 },
    #[error("sensor {ldr_mm} mm, sample {sample_id:?}: {n} repeats, need at least {MIN_REPEATS}")]
    InsufficientReplicates { ldr_mm: u32, sample_id: String, n: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid reading: {0}")]
    InvalidReading(String),
    #[error("line {line}: {msg}")]
    Csv { line: u64, msg: String },
    #[error("reference sample {0:?} not found")]
    UnknownSample(String),
}

impl TurbidityError {
    pub fn code(&self) -> &'static str {
        match self {
            TurbidityError::DegenerateReference { .. } => "DEGENERATE_REFERENCE",
            TurbidityError::InsufficientReplicates { .. } => "INSUFFICIENT_REPLICATES",
            TurbidityError::InsufficientData(_) => "INSUFFICIENT_DATA",
            TurbidityError::InvalidReading(_) => "INVALID_READING",
            TurbidityError::Csv { .. } => "CSV",
            TurbidityError::UnknownSample(_) => "UNKNOWN_SAMPLE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralReading {
    pub sample_id: String,
    pub t_hours: f64,
    pub red_v: f64,
    pub green_v: f64,
    pub blue_v: f64,
    pub yellow_v: f64,
}

impl SpectralReading {
    pub fn validate(&self) -> Result<(), TurbidityError> {
        if !(self.t_hours >= 0.0 && self.t_hours.is_finite()) {
            return Err(TurbidityError::InvalidReading(format!("{}: t_hours {}", self.sample_id, self.t_hours)));
        }
        for (name, v) in [("red_v", self.red_v), ("green_v", self.green_v), ("blue_v", self.blue_v), ("yellow_v", self.yellow_v)] {
            if !(0.0..=5.0).contains(&v) {
                return Err(TurbidityError::InvalidReading(format!("{}: {name} {v} outside [0, 5] V", self.sample_id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WaterClass {
    Clear,
    Turbid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ByrResult {
    pub ratio: f64,
    pub classification: WaterClass,
    pub threshold: f64,
}

/// Blue-to-yellow response ratio of `sample` against the clean-water reference.
pub fn byr(sample: &SpectralReading, water_ref: &SpectralReading) -> Result<f64, TurbidityError> {
    for (which, v) in [("reference blue", water_ref.blue_v), ("reference yellow", water_ref.yellow_v), ("sample yellow", sample.yellow_v)] {
        if !(v > DARK_GUARD_V) {
            return Err(TurbidityError::DegenerateReference { which, volts: v });
        }
    }
    Ok((sample.blue_v / water_ref.blue_v) / (sample.yellow_v / water_ref.yellow_v))
}

/// Turbid strictly above the threshold; the boundary itself is Clear.
pub fn classify(ratio: f64, threshold: f64) -> WaterClass {
    if ratio > threshold {
        WaterClass::Turbid
    } else {
        WaterClass::Clear
    }
}

pub fn analyze_point(sample: &SpectralReading, water_ref: &SpectralReading, threshold: f64) -> Result<ByrResult, TurbidityError> {
    let ratio = byr(sample, water_ref)?;
    Ok(ByrResult { ratio, classification: classify(ratio, threshold), threshold })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationRecord {
    pub ldr_mm: u32,
    pub tuning_ohms: f64,
    pub source_distance_cm: f64,
}

/// Repeated readings from one sensor setup over several reference solutions,
/// grouped by `sample_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorBatch {
    pub record: CalibrationRecord,
    pub readings: Vec<SpectralReading>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorScore {
    pub record: CalibrationRecord,
    pub range_v: f64,
    pub mean_sd_v: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub selected: CalibrationRecord,
    pub scores: Vec<SensorScore>,
}

fn sorted_sum(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.iter().sum()
}

/// Mean and sample standard deviation, independent of input order.
fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = sorted_sum(xs.to_vec()) / n;
    let var = sorted_sum(xs.iter().map(|x| (x - mean) * (x - mean)).collect()) / (n - 1.0);
    (mean, var.sqrt())
}

fn score_sensor(b: &SensorBatch) -> Result<SensorScore, TurbidityError> {
    let mut by_sample: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &b.readings {
        r.validate()?;
        by_sample.entry(r.sample_id.as_str()).or_default().push(r.blue_v);
    }
    if by_sample.len() < 2 {
        return Err(TurbidityError::InsufficientData(format!(
            "sensor {} mm has {} sample type(s), need at least 2",
            b.record.ldr_mm,
            by_sample.len()
        )));
    }
    let mut means = Vec::new();
    let mut sds = Vec::new();
    for (id, xs) in &by_sample {
        if xs.len() < MIN_REPEATS {
            return Err(TurbidityError::InsufficientReplicates { ldr_mm: b.record.ldr_mm, sample_id: id.to_string(), n: xs.len() });
        }
        let (m, s) = mean_sd(xs);
        means.push(m);
        sds.push(s);
    }
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    let mean_sd_v = sorted_sum(sds.clone()) / sds.len() as f64;
    let range_v = hi - lo;
    Ok(SensorScore { record: b.record, range_v, mean_sd_v, score: range_v / (mean_sd_v + SCORE_EPS) })
}

/// Picks the sensor setup with the widest response across reference
/// solutions relative to its repeat noise. Ties go to the smaller LDR.
pub fn select_calibration(batches: &[SensorBatch]) -> Result<CalibrationReport, TurbidityError> {
    if batches.len() < 2 {
        return Err(TurbidityError::InsufficientData(format!("{} sensor(s), need at least 2", batches.len())));
    }
    for b in batches {
        if !(b.record.tuning_ohms > 0.0 && b.record.source_distance_cm > 0.0) {
            return Err(TurbidityError::InvalidReading(format!("calibration record {:?}", b.record)));
        }
    }
    let mut scores = batches.iter().map(score_sensor).collect::<Result<Vec<_>, _>>()?;
    scores.sort_by(|a, b| {
        a.record
            .ldr_mm
            .cmp(&b.record.ldr_mm)
            .then(a.record.tuning_ohms.total_cmp(&b.record.tuning_ohms))
            .then(a.record.source_distance_cm.total_cmp(&b.record.source_distance_cm))
    });
    let best = scores
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.score.total_cmp(&b.score).then(j.cmp(i)))
        .map(|(_, s)| s.record)
        .expect("at least two sensors");
    Ok(CalibrationReport { selected: best, scores })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorPoint {
    pub t_hours: f64,
    pub ratio: Option<f64>,
    pub classification: Option<WaterClass>,
    /// Set when this point could not be evaluated.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRun {
    pub classification: WaterClass,
    pub from_t: f64,
    pub to_t: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub sample_id: String,
    pub threshold: f64,
    pub points: Vec<MonitorPoint>,
    pub first_turbid_t: Option<f64>,
    pub runs: Vec<ClassRun>,
    /// True when the series never returns to Clear after turning Turbid.
    pub monotone: bool,
}

impl MonitorReport {
    pub fn any_turbid(&self) -> bool {
        self.first_turbid_t.is_some()
    }
}

pub fn monitor(series: &[SpectralReading], water_ref: &SpectralReading, threshold: f64) -> Result<MonitorReport, TurbidityError> {
    let first = series.first().ok_or_else(|| TurbidityError::InsufficientData("empty series".into()))?;
    if series.windows(2).any(|w| w[1].t_hours < w[0].t_hours) {
        return Err(TurbidityError::InvalidReading("series is not sorted by t_hours".into()));
    }
    let points: Vec<MonitorPoint> = series
        .iter()
        .map(|s| match s.validate().and_then(|_| analyze_point(s, water_ref, threshold)) {
            Ok(r) => MonitorPoint { t_hours: s.t_hours, ratio: Some(r.ratio), classification: Some(r.classification), error: None },
            Err(e) => MonitorPoint { t_hours: s.t_hours, ratio: None, classification: None, error: Some(e.to_string()) },
        })
        .collect();
    let first_turbid_t = points.iter().find(|p| p.classification == Some(WaterClass::Turbid)).map(|p| p.t_hours);
    let mut runs: Vec<ClassRun> = Vec::new();
    for p in &points {
        let Some(c) = p.classification else { continue };
        match runs.last_mut() {
            Some(r) if r.classification == c => {
                r.to_t = p.t_hours;
                r.points += 1;
            }
            _ => runs.push(ClassRun { classification: c, from_t: p.t_hours, to_t: p.t_hours, points: 1 }),
        }
    }
    let monotone = runs.windows(2).all(|w| w[0].classification == WaterClass::Clear && w[1].classification == WaterClass::Turbid);
    Ok(MonitorReport { sample_id: first.sample_id.clone(), threshold, points, first_turbid_t, runs, monotone })
}

/// Monitors every non-reference sample in `readings` against the reference
/// sample `ref_id` (the earliest reference reading is used).
pub fn analyze(readings: &[SpectralReading], ref_id: &str, threshold: f64) -> Result<Vec<MonitorReport>, TurbidityError> {
    let water = readings
        .iter()
        .filter(|r| r.sample_id == ref_id)
        .min_by(|a, b| a.t_hours.total_cmp(&b.t_hours))
        .ok_or_else(|| TurbidityError::UnknownSample(ref_id.to_string()))?;
    water.validate()?;
    let mut groups: BTreeMap<&str, Vec<SpectralReading>> = BTreeMap::new();
    for r in readings.iter().filter(|r| r.sample_id != ref_id) {
        groups.entry(&r.sample_id).or_default().push(r.clone());
    }
    if groups.is_empty() {
        return Err(TurbidityError::InsufficientData("no samples besides the reference".into()));
    }
    groups
        .into_values()
        .map(|mut g| {
            g.sort_by(|a, b| a.t_hours.total_cmp(&b.t_hours));
            monitor(&g, water, threshold)
        })
        .collect()
}

fn check_header(rdr: &mut csv::Reader<impl Read>, want: &[&str]) -> Result<(), TurbidityError> {
    let got = rdr.headers().map_err(|e| TurbidityError::Csv { line: 1, msg: e.to_string() })?;
    if got.iter().ne(want.iter().copied()) {
        return Err(TurbidityError::Csv {
            line: 1,
            msg: format!("header must be exactly `{}`, got `{}`", want.join(","), got.iter().collect::<Vec<_>>().join(",")),
        });
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> TurbidityError {
    let line = e.position().map_or(0, |p| p.line());
    TurbidityError::Csv { line, msg: e.to_string() }
}

pub fn read_series(src: impl Read) -> Result<Vec<SpectralReading>, TurbidityError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(src);
    check_header(&mut rdr, &SERIES_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize::<SpectralReading>() {
        let r = rec.map_err(csv_err)?;
        r.validate().map_err(|e| TurbidityError::Csv { line: out.len() as u64 + 2, msg: e.to_string() })?;
        out.push(r);
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct CalibrationRow {
    ldr_mm: u32,
    tuning_ohms: f64,
    source_distance_cm: f64,
    sample_id: String,
    t_hours: f64,
    red_v: f64,
    green_v: f64,
    blue_v: f64,
    yellow_v: f64,
}

/// Reads calibration batches; rows are grouped by the three setup columns
/// in order of first appearance.
pub fn read_calibration(src: impl Read) -> Result<Vec<SensorBatch>, TurbidityError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(src);
    check_header(&mut rdr, &CALIBRATION_HEADER)?;
    let mut out: Vec<SensorBatch> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = k as u64 + 2;
        let row: CalibrationRow = rec.deserialize(None).map_err(|e| TurbidityError::Csv { line, msg: e.to_string() })?;
        let reading = SpectralReading {
            sample_id: row.sample_id,
            t_hours: row.t_hours,
            red_v: row.red_v,
            green_v: row.green_v,
            blue_v: row.blue_v,
            yellow_v: row.yellow_v,
        };
        reading.validate().map_err(|e| TurbidityError::Csv { line, msg: e.to_string() })?;
        let record = CalibrationRecord { ldr_mm: row.ldr_mm, tuning_ohms: row.tuning_ohms, source_distance_cm: row.source_distance_cm };
        match out.iter_mut().find(|b| b.record == record) {
            Some(b) => b.readings.push(reading),
            None => out.push(SensorBatch { record, readings: vec![reading] }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reading(id: &str, t: f64, blue: f64, yellow: f64) -> SpectralReading {
        SpectralReading { sample_id: id.into(), t_hours: t, red_v: 2.0, green_v: 2.2, blue_v: blue, yellow_v: yellow }
    }

    fn water() -> SpectralReading {
        reading("water", 0.0, 3.30, 3.20)
    }

    #[test]
    fn self_reference_is_one() {
        assert_eq!(byr(&water(), &water()).unwrap(), 1.0);
    }

    #[test]
    fn constructed_ratio() {
        let s = reading("s", 16.0, 2.079, 1.60);
        assert!((byr(&s, &water()).unwrap() - 1.26).abs() < 1e-12);
    }

    #[test]
    fn dark_reference_rejected() {
        let dark = reading("water", 0.0, 0.05, 3.2);
        assert!(matches!(byr(&water(), &dark), Err(TurbidityError::DegenerateReference { which: "reference blue", .. })));
        let s = reading("s", 0.0, 2.0, 0.01);
        assert!(matches!(byr(&s, &water()), Err(TurbidityError::DegenerateReference { which: "sample yellow", .. })));
    }

    #[test]
    fn classify_boundary() {
        assert_eq!(classify(1.26, 1.3), WaterClass::Clear);
        assert_eq!(classify(1.37, 1.3), WaterClass::Turbid);
        assert_eq!(classify(1.30, 1.3), WaterClass::Clear);
    }

    fn series(ratios: &[f64], ts: &[f64]) -> Vec<SpectralReading> {
        // blue = 1.65·ratio against the 3.30/3.20 reference and sample yellow 1.60
        ratios.iter().zip(ts).map(|(r, t)| reading("coconut", *t, 1.65 * r, 1.60)).collect()
    }

    #[test]
    fn monitor_finds_transition() {
        let s = series(&[1.26, 1.27, 1.37, 1.37, 1.38, 1.38], &[16.0, 25.0, 48.0, 64.0, 71.0, 97.0]);
        let rep = monitor(&s, &water(), DEFAULT_THRESHOLD).unwrap();
        assert_eq!(rep.first_turbid_t, Some(48.0));
        assert!(rep.monotone);
        assert_eq!(rep.runs.len(), 2);
        assert_eq!((rep.runs[0].points, rep.runs[1].points), (2, 4));
    }

    #[test]
    fn monitor_edge_cases() {
        let clear = series(&[1.1, 1.2], &[0.0, 5.0]);
        assert_eq!(monitor(&clear, &water(), 1.3).unwrap().first_turbid_t, None);
        let one = series(&[1.4], &[0.0]);
        assert_eq!(monitor(&one, &water(), 1.3).unwrap().first_turbid_t, Some(0.0));
        assert!(monitor(&[], &water(), 1.3).is_err());
    }

    #[test]
    fn bad_point_is_flagged_not_fatal() {
        let mut s = series(&[1.2, 1.4], &[0.0, 5.0]);
        s[0].yellow_v = 0.0;
        let rep = monitor(&s, &water(), 1.3).unwrap();
        assert!(rep.points[0].error.is_some());
        assert_eq!(rep.first_turbid_t, Some(5.0));
    }

    fn batch(ldr: u32, ohms: f64, means: &[f64], spread: f64) -> SensorBatch {
        let mut readings = Vec::new();
        for (k, m) in means.iter().enumerate() {
            for d in [-2.0, -1.0, 0.0, 1.0, 2.0] {
                readings.push(reading(&format!("ref{k}"), 0.0, m + d * spread, 3.0));
            }
        }
        SensorBatch { record: CalibrationRecord { ldr_mm: ldr, tuning_ohms: ohms, source_distance_cm: 4.0 }, readings }
    }

    #[test]
    fn selection_prefers_wide_quiet_sensor() {
        let b = [
            batch(3, 235.0, &[3.1, 2.5, 1.9], 0.15),
            batch(5, 623.0, &[3.28, 2.5, 1.77], 0.006),
            batch(7, 973.0, &[3.2, 3.16, 3.12], 0.006),
        ];
        let rep = select_calibration(&b).unwrap();
        assert_eq!(rep.selected.ldr_mm, 5);
        assert_eq!(rep.selected.tuning_ohms, 623.0);
        // hand-computed: range 1.51, sd of {-2..2}·0.006 = 0.006·√2.5
        let s5 = rep.scores.iter().find(|s| s.record.ldr_mm == 5).unwrap();
        assert!((s5.range_v - 1.51).abs() < 1e-12);
        assert!((s5.mean_sd_v - 0.006 * 2.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn selection_ties_and_limits() {
        let twins = [batch(7, 973.0, &[3.0, 2.0], 0.01), batch(3, 235.0, &[3.0, 2.0], 0.01)];
        assert_eq!(select_calibration(&twins).unwrap().selected.ldr_mm, 3);
        let exact = [batch(7, 973.0, &[3.0, 2.9], 0.0), batch(3, 235.0, &[3.0, 1.0], 0.01)];
        assert_eq!(select_calibration(&exact).unwrap().selected.ldr_mm, 7);
        let mut thin = batch(5, 623.0, &[3.0, 2.0], 0.01);
        thin.readings.truncate(7);
        let err = select_calibration(&[thin, batch(3, 235.0, &[3.0, 2.0], 0.01)]).unwrap_err();
        assert!(matches!(err, TurbidityError::InsufficientReplicates { ldr_mm: 5, n: 2, .. }));
    }

    #[test]
    fn csv_header_is_strict() {
        let ok = "sample_id,t_hours,red_v,green_v,blue_v,yellow_v\nwater,0,2,2,3.3,3.2\n";
        assert_eq!(read_series(ok.as_bytes()).unwrap().len(), 1);
        let bad = "sample,t_hours,red_v,green_v,blue_v,yellow_v\nwater,0,2,2,3.3,3.2\n";
        assert!(matches!(read_series(bad.as_bytes()), Err(TurbidityError::Csv { line: 1, .. })));
        let volts = "sample_id,t_hours,red_v,green_v,blue_v,yellow_v\nwater,0,2,2,7.3,3.2\n";
        assert!(matches!(read_series(volts.as_bytes()), Err(TurbidityError::Csv { line: 2, .. })));
    }

    #[test]
    fn calibration_csv_groups_by_setup() {
        let text = "ldr_mm,tuning_ohms,source_distance_cm,sample_id,t_hours,red_v,green_v,blue_v,yellow_v\n\
                    5,623,4,water,0,2,2,3.28,3.2\n3,235,4,water,0,2,2,3.1,3.2\n5,623,4,salt,0,2,2,1.77,3.2\n";
        let b = read_calibration(text.as_bytes()).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b[0].record.ldr_mm, 5);
        assert_eq!(b[0].readings.len(), 2);
    }

    proptest! {
        #[test]
        fn gain_invariance(v in prop::array::uniform8(0.6f64..3.3), g in 0.1001f64..=1.5) {
            let s = SpectralReading { sample_id: "s".into(), t_hours: 0.0, red_v: v[0], green_v: v[1], blue_v: v[2], yellow_v: v[3] };
            let w = SpectralReading { sample_id: "w".into(), t_hours: 0.0, red_v: v[4], green_v: v[5], blue_v: v[6], yellow_v: v[7] };
            let scale = |r: &SpectralReading| SpectralReading {
                red_v: r.red_v * g, green_v: r.green_v * g, blue_v: r.blue_v * g, yellow_v: r.yellow_v * g, ..r.clone()
            };
            let a = byr(&s, &w).unwrap();
            let b = byr(&scale(&s), &scale(&w)).unwrap();
            prop_assert!(((a - b) / a).abs() <= 1e-12);
        }

        #[test]
        fn selection_order_invariant(seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut b = vec![
                batch(3, 235.0, &[3.1, 2.5, 1.9], 0.15),
                batch(5, 623.0, &[3.28, 2.5, 1.77], 0.006),
                batch(7, 973.0, &[3.2, 3.16, 3.12], 0.006),
            ];
            let base = select_calibration(&b).unwrap();
            b.shuffle(&mut rng);
            for x in b.iter_mut() {
                x.readings.shuffle(&mut rng);
            }
            prop_assert_eq!(select_calibration(&b).unwrap(), base);
        }

        #[test]
        fn classify_has_one_switch(t in 0.5f64..2.0) {
            let grid: Vec<WaterClass> = (0..400).map(|k| classify(0.5 + k as f64 * 0.005, t)).collect();
            prop_assert!(grid.windows(2).filter(|w| w[0] != w[1]).count() <= 1);
            prop_assert!(grid.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basestation::DispatchPolicy;
use crate::detect::DetectorConfig;
use crate::radio::ChannelModel;
use crate::retriever::TankModel;
use crate::sensors::{GasModel, GpsModel, SmokeThresholds};
use crate::world::{Entity, GeoFix, HeatSource, SmokeField, World, DEFAULT_AMBIENT_C, DEFAULT_BOUND_M};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("{path}: {msg}")]
    Invalid { path: String, msg: String },
}

impl ScenarioError {
    pub fn code(&self) -> &'static str {
        match self {
            ScenarioError::Io { .. } => "IO",
            ScenarioError::Parse { .. } | ScenarioError::Invalid { .. } => "CONFIG",
        }
    }

    fn invalid(path: impl Into<String>, msg: impl Into<String>) -> Self {
        ScenarioError::Invalid { path: path.into(), msg: msg.into() }
    }
}

fn default_dt_ms() -> u64 {
    100
}

fn default_bounds() -> f64 {
    DEFAULT_BOUND_M
}

fn default_ambient() -> f64 {
    DEFAULT_AMBIENT_C
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroneConfig {
    /// Sweep rectangle `[x_min, y_min, x_max, y_max]` in local meters.
    pub area_m: [f64; 4],
    #[serde(default = "DroneConfig::default_speed")]
    pub speed_mps: f64,
    #[serde(default = "DroneConfig::default_alt")]
    pub alt_m: f64,
    #[serde(default = "DroneConfig::default_fov")]
    pub fov_deg: f64,
    #[serde(default = "DroneConfig::default_period")]
    pub sensor_period_ticks: u64,
    #[serde(default)]
    pub gas: GasModel,
}

impl DroneConfig {
    fn default_speed() -> f64 {
        5.0
    }
    fn default_alt() -> f64 {
        10.0
    }
    fn default_fov() -> f64 {
        60.0
    }
    fn default_period() -> u64 {
        10
    }

    /// Ground footprint edge of the nadir camera.
    pub fn footprint_m(&self) -> f64 {
        2.0 * self.alt_m * (self.fov_deg.to_radians() / 2.0).tan()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieverSetup {
    #[serde(default)]
    pub start_m: [f64; 2],
    #[serde(default)]
    pub heading_rad: f64,
    #[serde(default)]
    pub tank: TankModel,
}

impl Default for RetrieverSetup {
    fn default() -> Self {
        RetrieverSetup { start_m: [0.0, 0.0], heading_rad: 0.0, tank: TankModel::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurbidityInputs {
    pub csv: PathBuf,
    pub ref_sample: String,
    #[serde(default = "TurbidityInputs::default_threshold")]
    pub threshold: f64,
}

impl TurbidityInputs {
    fn default_threshold() -> f64 {
        crate::turbidity::DEFAULT_THRESHOLD
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_dt_ms")]
    pub dt_ms: u64,
    #[serde(default = "default_bounds")]
    pub bounds_m: f64,
    pub origin: GeoFix,
    #[serde(default = "default_ambient")]
    pub ambient_c: f64,
    #[serde(default = "SmokeField::clear")]
    pub smoke: SmokeField,
    #[serde(default)]
    pub heat_sources: Vec<HeatSource>,
    #[serde(default)]
    pub entities: Vec<Entity>,
    pub drone: DroneConfig,
    #[serde(default)]
    pub retriever: RetrieverSetup,
    #[serde(default)]
    pub gps: GpsModel,
    #[serde(default)]
    pub gas_thresholds: SmokeThresholds,
    #[serde(default)]
    pub channel: ChannelModel,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub policy: DispatchPolicy,
    #[serde(default)]
    pub turbidity_inputs: Option<TurbidityInputs>,
}

impl ScenarioConfig {
    /// Strict parse; errors carry the JSON path of the offending field.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ScenarioError::Parse { path: if path == "." { "$".into() } else { path }, msg: e.into_inner().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a scenario file; a relative turbidity CSV path resolves against
    /// the scenario's directory.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(t) = cfg.turbidity_inputs.as_mut() {
            if t.csv.is_relative() {
                t.csv = path.parent().unwrap_or(Path::new(".")).join(&t.csv);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        use ScenarioError as E;
        if self.dt_ms == 0 {
            return Err(E::invalid("dt_ms", "must be positive"));
        }
        self.world().validate().map_err(|e| E::invalid("world", e.to_string()))?;
        self.origin.validate().map_err(|e| E::invalid("origin", e.to_string()))?;
        let mut ids = std::collections::BTreeSet::new();
        for (k, e) in self.entities.iter().enumerate() {
            if !ids.insert(e.id) {
                return Err(E::invalid(format!("entities[{k}].id"), format!("duplicate id {}", e.id)));
            }
            if !(e.radius_m > 0.0 && e.height_m > 0.0) {
                return Err(E::invalid(format!("entities[{k}]"), "radius_m and height_m must be positive"));
            }
        }
        let d = &self.drone;
        let [x0, y0, x1, y1] = d.area_m;
        if !(x0 < x1 && y0 < y1) {
            return Err(E::invalid("drone.area_m", "need x_min < x_max and y_min < y_max"));
        }
        if d.area_m.iter().any(|v| v.abs() > self.bounds_m) {
            return Err(E::invalid("drone.area_m", "outside scenario bounds"));
        }
        if !(d.speed_mps > 0.0 && d.speed_mps.is_finite()) {
            return Err(E::invalid("drone.speed_mps", "must be positive"));
        }
        if !(d.alt_m > 0.0 && d.alt_m < 500.0) {
            return Err(E::invalid("drone.alt_m", "must be in (0, 500)"));
        }
        if !(d.fov_deg > 10.0 && d.fov_deg < 120.0) {
            return Err(E::invalid("drone.fov_deg", "must be in (10, 120)"));
        }
        if d.sensor_period_ticks == 0 {
            return Err(E::invalid("drone.sensor_period_ticks", "must be positive"));
        }
        self.retriever.tank.validate().map_err(|e| E::invalid("retriever.tank", e.to_string()))?;
        if self.retriever.start_m.iter().any(|v| !(v.abs() <= self.bounds_m)) {
            return Err(E::invalid("retriever.start_m", "outside scenario bounds"));
        }
        if !(self.gps.sigma_m >= 0.0 && self.gps.sigma_m.is_finite()) {
            return Err(E::invalid("gps.sigma_m", "must be non-negative"));
        }
        if self.gas_thresholds.elevated_at > self.gas_thresholds.thick_above {
            return Err(E::invalid("gas_thresholds", "elevated_at must not exceed thick_above"));
        }
        self.channel.validate().map_err(|m| E::invalid("channel", m))?;
        self.detector.validate().map_err(|m| E::invalid("detector", m))?;
        self.policy.validate().map_err(|m| E::invalid("policy", m))?;
        if let Some(t) = &self.turbidity_inputs {
            if !(t.threshold > 0.0) {
                return Err(E::invalid("turbidity_inputs.threshold", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn world(&self) -> World {
        World {
            bounds_m: self.bounds_m,
            ambient_c: self.ambient_c,
            smoke: self.smoke.clone(),
            heat_sources: self.heat_sources.clone(),
            entities: self.entities.clone(),
        }
    }

    pub fn dt_s(&self) -> f64 {
        self.dt_ms as f64 / 1000.0
    }

    /// Ticks per simulated second, at least one.
    pub fn ticks_per_second(&self) -> u64 {
        (1000 / self.dt_ms).max(1)
    }
}

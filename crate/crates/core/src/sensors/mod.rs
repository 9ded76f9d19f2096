//! Models of the drone sensor pack and the retriever's rangers.

pub mod camera;
pub mod gas;
pub mod gps;
pub mod range;

pub use camera::{
    capture_thermal, capture_visual, CameraPose, FrameSubject, ThermalFrame, VisualFrame, VisualPixel,
    DETECTABILITY_FLOOR,
};
pub use gas::{classify_smoke, sample_gas, GasModel, GasReading, SmokeClass, SmokeThresholds};
pub use gps::{sample_gps, GpsModel};
pub use range::{sample_range, RangeReading, RangeSensor, SensorPose};

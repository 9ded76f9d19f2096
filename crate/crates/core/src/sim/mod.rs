//! Scenario loading, the deterministic tick loop, its event log and the
//! console gateway.

pub mod drone;
pub mod engine;
pub mod gateway;
pub mod log;
pub mod scenario;

pub use engine::{run, Engine, EngineError, Inbound, Outcome, RunSummary};
pub use log::{replay, EventLog, GatewayQueue, Replay, ReplayError};
pub use scenario::{ScenarioConfig, ScenarioError};

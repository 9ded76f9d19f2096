//! Deterministic search-and-rescue simulator: world and sensor models, the
//! 32-byte radio protocol, the base station's detection and dispatch logic,
//! the retriever state machine, the spectral turbidity analyzer and the
//! tick engine that binds them.

// `!(x > lo)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basestation;
pub mod detect;
pub mod events;
pub mod radio;
pub mod retriever;
pub mod rng;
pub mod sensors;
pub mod turbidity;
pub mod world;
pub mod sim;

pub use basestation::{BaseStation, Command, DispatchMode, DispatchPolicy};
pub use events::{Event, EventRecord};
pub use radio::{FrameError, Message, RadioFrame};
pub use retriever::{RetrieverPhase, TankModel};
pub use sim::{run, Engine, EventLog, Outcome, RunSummary, ScenarioConfig};
pub use world::{Entity, EntityKind, GeoFix, LocalPoint, World};

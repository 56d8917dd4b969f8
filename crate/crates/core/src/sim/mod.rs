//! Seeded point-queue simulator of a signalized multimodal corridor.
//!
//! Vehicles travel each lane at free-flow speed, then wait in a vertical
//! queue at the stop line and leave at the saturation rate while their
//! movement has green. Every phase change passes through 3 s of amber and
//! 2 s of all-red.

pub mod config;
pub mod demand;
pub mod network;
pub mod signal;
pub mod world;

pub use config::SimConfig;
pub use demand::DemandSpec;
pub use network::{Approach, Entry, Lane, Mode, Network, LANES_PER_INTERSECTION};
pub use signal::{Phase, SignalController, Stage, ALL_RED_S, AMBER_S, MAX_GREEN_S, MIN_GREEN_S, TRANSITION_S};
pub use world::{load_scenario, Discharge, Motion, Scope, SimWorld, StepRecord, Vehicle};

//! Cycle-level simulator of a hybrid DRAM/NVM main memory with pluggable
//! page-placement policies.

pub mod analysis;
pub mod controller;
pub mod cpu;
pub mod device;
pub mod experiment;
pub mod metrics;
pub mod migration;
pub mod policy;
pub mod scalar;
pub mod sim;
pub mod trace;
pub mod ubm;

pub use scalar::Scalar;

/// Double-precision simulator.
pub type Simulator = sim::System<f64>;
/// Single-precision simulator.
pub type SimulatorF32 = sim::System<f32>;
pub type UtilityEngine = ubm::UbmEngine<f64>;
pub type PlacementPolicy = policy::Policy<f64>;
pub type Threshold = ubm::ThresholdState<f64>;

//! Mobile WiMAX uplink simulation with QoE-driven source rate control.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod mac;
pub mod metrics;
pub mod mobility;
pub mod qoe;
pub mod runner;
pub mod scenario;
pub mod sim;
pub mod simulation;

pub use scenario::{Mode, RunMode, ScenarioConfig};

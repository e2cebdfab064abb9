//! Fixed-step co-simulation with runtime model swapping.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod condition;
pub mod config;
pub mod engine;
pub mod graph;
pub mod log;
pub mod scenarios;
pub mod transfer;
pub mod units;
pub mod value;

pub use config::{parse_multi_model, validate_config, MultiModelConfig, PortId};
pub use engine::{run_simulation, RunOptions, Simulation, SimulationResult, StepLog};
pub use value::{Value, ValueType};

//! Discrete-time vehicle-to-grid charging simulator with baseline
//! controllers, evaluation metrics and deterministic replays.

pub mod baselines;
pub mod behavior;
pub mod config;
pub mod engine;
pub mod error;
pub mod ev;
pub mod experiment;
pub mod grid;
pub mod metrics;
pub mod rl;
pub mod rng;
pub mod series;
pub mod station;

pub use config::{Problem, SimConfig};
pub use engine::{Controller, Replay, SimTrace, Simulation};
pub use error::{Result, SimError};
pub use metrics::{compute_metrics, Metrics};

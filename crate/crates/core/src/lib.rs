//! Cooperative UWB positioning.
//!
//! Synchronized anchors time each tag's packet (TDOA); tags additionally run
//! a chained single-packet ranging exchange among themselves (TWR). A
//! per-tag extended Kalman filter fuses both. The crate simulates the whole
//! system, replays recorded logs through the same estimator, and computes
//! CEP-based precision statistics.

pub mod cli;
pub mod ekf;
pub mod engine;
pub mod geometry;
pub mod io;
pub mod measurement;
pub mod metrics;
pub mod scenario;
pub mod transmission;

pub use ekf::{Covariance, FilterConfig, TagState};
pub use engine::{Layout, Mode, RunResult};
pub use geometry::{AnchorSet, Point2, Room, SPEED_OF_LIGHT};
pub use measurement::MeasurementBundle;
pub use scenario::{validate_scenario, Scenario};

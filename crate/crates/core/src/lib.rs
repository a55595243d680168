//! Virtual accelerated-life test bench for automotive flash LiDAR sensors.
//!
//! The crate simulates the complete rig: a thermal-cycling plant with a
//! cascaded PI controller, a rotary stage sweeping the sensor frustum over
//! calibration and reflectance targets, the flash LiDAR device itself
//! (time-of-flight waveform synthesis, peak detection, telemetry, aging),
//! an orchestrator that runs the automated test sequence, a bag-style
//! binary recording format, and the analysis pipeline that turns recorded
//! campaigns into degradation metrics.
//!
//! Everything runs on a deterministic virtual clock: identical seeds and
//! configs produce byte-identical recordings and reports.

pub mod analysis;
pub mod bag;
pub mod config;
pub mod lidar;
pub mod orchestrator;
pub mod rng;
pub mod simbus;
pub mod stage;
pub mod thermal;

pub use config::Config;

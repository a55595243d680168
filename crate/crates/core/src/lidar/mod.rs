//! Simulated flash LiDAR device under test.
//!
//! Covers the whole detection chain: wide-FOV intrinsic projection, scene
//! raycast against the cylindrical target band, return-pulse synthesis in
//! the time domain, first-two-peak detection, ToF-to-distance conversion,
//! 12-bit intensity formation, internal operating telemetry, and the
//! parametric aging state that degrades all of it across cycles.

mod aging;
mod capture;
mod intrinsics;
mod scene;
mod telemetry;
mod waveform;

pub use aging::{advance_aging, AgingParams, AgingState, DriftSigmas, IntrinsicsDelta};
pub use capture::{
    capture_frame, compute_dir_grid, compute_hit_grid, compute_hit_grid_with, frame_from_grid,
    sigma_dark_dn, BeamProfile, CaptureCtx, DirGrid, Frame, FrameTruth, HitGrid, NoiseParams,
    PixelHit, PARAMETRIC_PEAK_SIGMA_SCALE, PARAMETRIC_TOF_SIGMA_COEFF,
};
pub use intrinsics::{Direction, Intrinsics};
pub use scene::{
    hit_from_direction, raycast, sample_footprint, Hit, MarkerGrid, MarkerPos, PanelSpec, Stripe,
    TargetId, TargetScene,
};
pub use telemetry::{telemetry, OperatingData, TelemetryParams};
pub use waveform::{
    detect_peaks, synth_waveform, tof_to_distance, NoiseModel, Pulse, Return, WaveformParams,
    SPEED_OF_LIGHT_M_S,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LidarError {
    #[error("direction off-axis angle {0} rad is outside the projection model validity")]
    OutsideModel(f64),
    #[error("time of flight must be non-negative, got {0}")]
    NegativeTof(f64),
    #[error("invalid sensor parameters: {0}")]
    InvalidSpec(String),
}

/// Fixed characteristics of the flash LiDAR device under test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DutSpec {
    pub width_px: u16,
    pub height_px: u16,
    pub hfov_deg: f64,
    pub vfov_deg: f64,
    pub wavelength_nm: f64,
    pub d_near_m: f64,
    pub d_far_m: f64,
    pub max_frame_rate_hz: f64,
    pub intensity_bits: u8,
}

impl Default for DutSpec {
    fn default() -> Self {
        Self {
            width_px: 128,
            height_px: 32,
            hfov_deg: 120.0,
            vfov_deg: 27.5,
            wavelength_nm: 1064.0,
            d_near_m: 0.5,
            d_far_m: 25.0,
            max_frame_rate_hz: 25.0,
            intensity_bits: 12,
        }
    }
}

impl DutSpec {
    pub fn pixel_count(&self) -> usize {
        self.width_px as usize * self.height_px as usize
    }

    /// Highest representable DN (4095 for the 12-bit imager).
    pub fn dn_max(&self) -> u16 {
        ((1u32 << self.intensity_bits) - 1) as u16
    }

    pub fn validate(&self) -> Result<(), LidarError> {
        if self.pixel_count() == 0 {
            return Err(LidarError::InvalidSpec("empty imager".into()));
        }
        if !(self.d_near_m < self.d_far_m) {
            return Err(LidarError::InvalidSpec("d_near must be below d_far".into()));
        }
        if self.intensity_bits == 0 || self.intensity_bits > 16 {
            return Err(LidarError::InvalidSpec(
                "intensity depth must fit u16".into(),
            ));
        }
        Ok(())
    }
}

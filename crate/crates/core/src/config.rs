//! Campaign configuration: one JSON document with full defaults.
//!
//! Unknown keys are rejected so typos fail loudly. Defaults mirror the
//! physical rig where its parameters are known and are documented
//! assumptions everywhere else (see the README parameter table).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lidar::{
    AgingParams, BeamProfile, DutSpec, Intrinsics, NoiseParams, TargetScene, TelemetryParams,
};
use crate::stage::StageParams;
use crate::thermal::{LoadProfile, PiGains, PlantParams, ProfilePolicy};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config field {field}: {message}")]
    Invalid { field: &'static str, message: String },
}

/// Sweep and capture schedule of one campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignParams {
    pub cycles: u32,
    pub profile: LoadProfile,
    pub sweep_start_deg: f64,
    pub sweep_end_deg: f64,
    pub sweep_step_deg: f64,
    pub frames_per_position: u16,
    pub dut_count: u8,
    /// Settling tolerance, °C.
    pub epsilon_c: f64,
    /// Settling hold, virtual seconds.
    pub hold_s: f64,
    /// Abort bound for one settling wait, virtual seconds.
    pub settle_timeout_s: f64,
    /// Thermal integration step, virtual seconds.
    pub thermal_dt_s: f64,
    /// Cadence of thermal records while recording, virtual seconds.
    pub thermal_record_dt_s: f64,
}

impl Default for CampaignParams {
    fn default() -> Self {
        Self {
            cycles: 1,
            profile: LoadProfile {
                t_min_c: -10.0,
                t_max_c: 85.0,
                t_step_c: 5.0,
                cycle_duration_h: 6.0,
                policy: ProfilePolicy::Triangular,
            },
            sweep_start_deg: -60.0,
            sweep_end_deg: 60.0,
            sweep_step_deg: 0.9375,
            frames_per_position: 10,
            dut_count: 3,
            epsilon_c: 0.5,
            hold_s: 30.0,
            settle_timeout_s: 10.0 * crate::orchestrator::CLOSED_LOOP_SETTLE_BOUND_S,
            thermal_dt_s: 0.1,
            thermal_record_dt_s: 5.0,
        }
    }
}

impl CampaignParams {
    /// Commanded sweep grid, inclusive of both ends.
    pub fn sweep_positions(&self) -> Vec<f64> {
        let n = ((self.sweep_end_deg - self.sweep_start_deg) / self.sweep_step_deg).floor() as usize;
        (0..=n)
            .map(|i| self.sweep_start_deg + i as f64 * self.sweep_step_deg)
            .collect()
    }
}

/// Forced degradation applied at the start of a cycle, for
/// injection/recovery experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InjectionOverride {
    pub cycle: u32,
    /// Target sensor; None applies to all.
    pub dut: Option<u8>,
    pub eta_p: Option<f64>,
    pub widen: Option<f64>,
    /// Multiplies the true fx (e.g. 1.02 for +2%).
    pub fx_scale: Option<f64>,
    pub fy_scale: Option<f64>,
    pub cx_shift_px: Option<f64>,
    pub cy_shift_px: Option<f64>,
    pub k1_shift: Option<f64>,
}

impl Default for InjectionOverride {
    fn default() -> Self {
        Self {
            cycle: 0,
            dut: None,
            eta_p: None,
            widen: None,
            fx_scale: None,
            fy_scale: None,
            cx_shift_px: None,
            cy_shift_px: None,
            k1_shift: None,
        }
    }
}

/// Injected faults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InjectionParams {
    /// Dead pixels present from the start: (dut, u, v).
    pub dead_pixels: Vec<(u8, u16, u16)>,
    pub overrides: Vec<InjectionOverride>,
}

/// Analysis thresholds and solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisParams {
    /// Dead pixel threshold above the noise floor, in dark sigmas.
    pub dead_threshold_sigmas: f64,
    /// Absolute floor of the dead threshold, DN.
    pub dead_threshold_floor_dn: f64,
    /// Use every n-th calibration pose (1 = all).
    pub calib_pose_stride: usize,
    /// Minimum marker correspondences required for a calibration fit.
    pub min_marker_detections: usize,
    pub max_solver_iterations: usize,
    /// Central fraction of each stripe admitted to the intensity profile.
    pub stripe_roi_fraction: f64,
    /// Intensity deciles for the distance-accuracy breakdown.
    pub intensity_bins: usize,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            dead_threshold_sigmas: 3.0,
            dead_threshold_floor_dn: 1.0,
            calib_pose_stride: 1,
            min_marker_detections: 20,
            max_solver_iterations: 100,
            stripe_roi_fraction: 0.6,
            intensity_bins: 10,
        }
    }
}

/// The complete, self-contained bench configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub out_dir: String,
    /// Skip waveform synthesis and sample detections from closed form.
    pub parametric_mode: bool,
    /// Also write one thermal trace CSV per temperature step.
    pub thermal_trace_csv: bool,
    pub campaign: CampaignParams,
    pub plant: PlantParams,
    pub gains: PiGains,
    pub stage: StageParams,
    pub dut: DutSpec,
    pub intrinsics_nominal: Intrinsics,
    pub beam: BeamProfile,
    /// Radiometric gain: DN at 1 m range, unit reflectance, beam center.
    pub gain_dn: GainDn,
    pub noise: NoiseParams,
    pub telemetry: TelemetryParams,
    pub scene: TargetScene,
    pub aging: AgingParams,
    pub injection: InjectionParams,
    pub analysis: AnalysisParams,
}

/// Newtype so the default gain is visible in serialized configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GainDn(pub f64);

impl Default for GainDn {
    fn default() -> Self {
        GainDn(4500.0)
    }
}

impl Config {
    pub fn from_json(json: &str) -> Result<Self, ConfigError> {
        let cfg: Config = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field: &'static str, message: String| ConfigError::Invalid { field, message };
        self.campaign
            .profile
            .validate()
            .map_err(|e| invalid("campaign.profile", e.to_string()))?;
        self.gains
            .validate()
            .map_err(|e| invalid("gains", e.to_string()))?;
        self.stage
            .validate()
            .map_err(|e| invalid("stage", e.to_string()))?;
        self.dut
            .validate()
            .map_err(|e| invalid("dut", e.to_string()))?;
        let theta_max = (self.dut.hfov_deg / 2.0).to_radians() * 1.2;
        self.intrinsics_nominal
            .validate(self.dut.width_px, self.dut.height_px, theta_max)
            .map_err(|e| invalid("intrinsics_nominal", e.to_string()))?;

        let c = &self.campaign;
        if !(c.sweep_step_deg > 0.0) {
            return Err(invalid("campaign.sweep_step_deg", "must be positive".into()));
        }
        if c.sweep_start_deg >= c.sweep_end_deg {
            return Err(invalid("campaign.sweep_start_deg", "empty sweep range".into()));
        }
        if c.sweep_start_deg < self.stage.phi_min_deg || c.sweep_end_deg > self.stage.phi_max_deg {
            return Err(invalid(
                "campaign.sweep_start_deg",
                "sweep range outside stage limits".into(),
            ));
        }
        if c.frames_per_position == 0 {
            return Err(invalid("campaign.frames_per_position", "must be >= 1".into()));
        }
        if c.dut_count == 0 || c.dut_count > 3 {
            return Err(invalid("campaign.dut_count", "rig carries 1..=3 sensors".into()));
        }
        if !(c.epsilon_c > 0.0) {
            return Err(invalid("campaign.epsilon_c", "must be positive".into()));
        }
        if c.hold_s < 0.0 {
            return Err(invalid("campaign.hold_s", "must be non-negative".into()));
        }
        if !(c.thermal_dt_s > 0.0) || c.thermal_dt_s > self.plant.max_step_s {
            return Err(invalid(
                "campaign.thermal_dt_s",
                "must be positive and within the plant step cap".into(),
            ));
        }
        for (d, u, v) in &self.injection.dead_pixels {
            if *d >= c.dut_count || *u >= self.dut.width_px || *v >= self.dut.height_px {
                return Err(invalid(
                    "injection.dead_pixels",
                    format!("pixel ({d},{u},{v}) out of range"),
                ));
            }
        }
        for o in &self.injection.overrides {
            if let Some(e) = o.eta_p {
                if !(e > 0.0 && e <= 1.0) {
                    return Err(invalid("injection.overrides", "eta_p must be in (0,1]".into()));
                }
            }
        }
        if self.analysis.calib_pose_stride == 0 {
            return Err(invalid("analysis.calib_pose_stride", "must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = Config::default();
        cfg.validate().unwrap();
        let json = cfg.to_json_pretty();
        let back = Config::from_json(&json).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn default_matches_rig_parameters() {
        let cfg = Config::default();
        assert_eq!(cfg.dut.width_px, 128);
        assert_eq!(cfg.dut.height_px, 32);
        assert_eq!(cfg.dut.intensity_bits, 12);
        assert_eq!(cfg.campaign.sweep_positions().len(), 129);
        assert_eq!(cfg.campaign.frames_per_position, 10);
        assert_eq!(cfg.campaign.dut_count, 3);
        assert_eq!(cfg.campaign.profile.t_min_c, -10.0);
        assert_eq!(cfg.campaign.profile.t_max_c, 85.0);
        assert_eq!(cfg.campaign.profile.t_step_c, 5.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = Config::from_json(r#"{"seed": 1, "no_such_key": true}"#).unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
    }

    #[test]
    fn invalid_fields_name_the_field() {
        let mut cfg = Config::default();
        cfg.campaign.frames_per_position = 0;
        match cfg.validate() {
            Err(ConfigError::Invalid { field, .. }) => {
                assert_eq!(field, "campaign.frames_per_position")
            }
            other => panic!("expected Invalid, got {other:?}"),
        }
    }

    #[test]
    fn sweep_grid_is_inclusive() {
        let c = CampaignParams::default();
        let pos = c.sweep_positions();
        assert_eq!(pos.len(), 129);
        assert_eq!(pos[0], -60.0);
        assert!((pos[128] - 60.0).abs() < 1e-12);
    }
}

//! Internal operating data of the sensor.
//!
//! Component temperatures track the housing with fixed offsets, the TEC
//! holds the laser at its set-point until it runs out of authority, and
//! the automatic power control raises laser current and pump time as the
//! output power degrades.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::rng;
use crate::thermal::ThermalState;

use super::aging::AgingState;

/// One telemetry snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingData {
    pub t_fpga_c: f64,
    pub t_tof_c: f64,
    pub t_laser_c: f64,
    pub v_tecn_v: f64,
    pub v_tecp_v: f64,
    pub i_tec_a: f64,
    pub v_laser_v: f64,
    pub i_laser_a: f64,
    pub t_pump_s: f64,
    /// Main power supply rails by name (e.g. "1V8", "3V3").
    pub rails_v: BTreeMap<String, f64>,
}

/// Telemetry synthesis constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TelemetryParams {
    /// FPGA die rise above housing, K.
    pub dt_fpga_k: f64,
    /// ToF die rise above housing, K.
    pub dt_tof_k: f64,
    /// TEC set-point for the laser diode, °C.
    pub tec_setpoint_c: f64,
    /// Largest housing offset the TEC can hold, K.
    pub tec_authority_k: f64,
    /// TEC current per kelvin of housing offset, A/K.
    pub tec_a_per_k: f64,
    /// TEC voltage per ampere, V/A.
    pub tec_v_per_a: f64,
    /// Laser pulse current of a fresh sensor, A.
    pub i_laser_nominal_a: f64,
    pub v_laser_nominal_v: f64,
    /// Laser pump time of a fresh sensor, s.
    pub t_pump_nominal_s: f64,
    /// Nominal rail voltages by name.
    pub rails_nominal_v: BTreeMap<String, f64>,
    /// Relative rail noise (1 sigma, truncated at 3 sigma).
    pub rail_noise_rel: f64,
}

impl Default for TelemetryParams {
    fn default() -> Self {
        let rails = [("1V8", 1.8), ("3V3", 3.3), ("5V0", 5.0), ("12V0", 12.0)];
        Self {
            dt_fpga_k: 12.0,
            dt_tof_k: 15.0,
            tec_setpoint_c: 25.0,
            tec_authority_k: 45.0,
            tec_a_per_k: 0.04,
            tec_v_per_a: 2.0,
            i_laser_nominal_a: 8.0,
            v_laser_nominal_v: 24.0,
            t_pump_nominal_s: 180.0,
            rails_nominal_v: rails.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            rail_noise_rel: 0.002,
        }
    }
}

/// Synthesizes the telemetry of one sensor.
///
/// `dut` selects which housing thermocouple feeds the model.
pub fn telemetry(
    thermal: &ThermalState,
    aging: &AgingState,
    params: &TelemetryParams,
    dut: u8,
    seed: u64,
) -> OperatingData {
    let t_housing = thermal.t_housing[(dut as usize).min(2)];
    let offset = t_housing - params.tec_setpoint_c;

    let (t_laser, i_tec) = if offset.abs() <= params.tec_authority_k {
        (params.tec_setpoint_c, params.tec_a_per_k * offset.abs())
    } else {
        // railed: the diode drifts with the housing beyond the authority
        (
            t_housing - offset.signum() * params.tec_authority_k,
            params.tec_a_per_k * params.tec_authority_k,
        )
    };
    let v_tec = i_tec * params.tec_v_per_a;

    let mut rails_v = BTreeMap::new();
    for (i, (name, nominal)) in params.rails_nominal_v.iter().enumerate() {
        let (z, _) = rng::normal_pair(rng::stream(seed, &[0x4a11, i as u64]));
        let z = z.clamp(-3.0, 3.0);
        rails_v.insert(name.clone(), nominal * (1.0 + params.rail_noise_rel * z));
    }

    OperatingData {
        t_fpga_c: t_housing + params.dt_fpga_k,
        t_tof_c: t_housing + params.dt_tof_k,
        t_laser_c: t_laser,
        v_tecn_v: -v_tec,
        v_tecp_v: v_tec,
        i_tec_a: i_tec,
        v_laser_v: params.v_laser_nominal_v,
        i_laser_a: params.i_laser_nominal_a / aging.eta_p,
        t_pump_s: params.t_pump_nominal_s / aging.eta_p,
        rails_v,
    }
}

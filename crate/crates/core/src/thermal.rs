//! Lumped-parameter thermal rig: chiller, coolant loop, cooling plate and
//! three sensor housings, with the cascaded PI controller and the settling
//! detector that gates data capture.
//!
//! The plant is a first-order thermal network integrated with explicit
//! Euler. Time constants are minutes, the step is 0.1 s, so stiffness is
//! not a concern. Heat always flows hot to cold; with zero self-heating
//! and a uniform temperature the update is the identity to machine
//! precision.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ThermalError {
    #[error("non-finite temperature in thermal state")]
    NonFinite,
    #[error("integration step {dt} exceeds the configured cap {cap}")]
    StepTooLarge { dt: f64, cap: f64 },
    #[error("invalid load profile: {0}")]
    InvalidProfile(String),
}

/// Physical clamp applied to every simulated temperature, in °C.
pub const TEMP_CLAMP_C: (f64, f64) = (-40.0, 120.0);

/// Rig temperature snapshot. Indices follow the thermocouple layout:
/// T0 ambient, T1 plate, T2..T4 the three DUT housings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalState {
    pub t_amb: f64,
    pub t_plate: f64,
    pub t_housing: [f64; 3],
    pub t_oil: f64,
}

impl ThermalState {
    /// Uniform state at temperature `t`.
    pub fn uniform(t: f64) -> Self {
        Self {
            t_amb: t,
            t_plate: t,
            t_housing: [t; 3],
            t_oil: t,
        }
    }

    pub fn mean_housing(&self) -> f64 {
        (self.t_housing[0] + self.t_housing[1] + self.t_housing[2]) / 3.0
    }

    pub fn is_finite(&self) -> bool {
        self.t_amb.is_finite()
            && self.t_plate.is_finite()
            && self.t_oil.is_finite()
            && self.t_housing.iter().all(|t| t.is_finite())
    }

    /// As the T0..T4 thermocouple vector.
    pub fn thermocouples(&self) -> [f64; 5] {
        [
            self.t_amb,
            self.t_plate,
            self.t_housing[0],
            self.t_housing[1],
            self.t_housing[2],
        ]
    }
}

/// Direction policy of the temperature cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfilePolicy {
    AscendingOnly,
    Triangular,
}

/// Thermal load cycle: stepped set-points between two extremes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub t_min_c: f64,
    pub t_max_c: f64,
    pub t_step_c: f64,
    pub cycle_duration_h: f64,
    pub policy: ProfilePolicy,
}

impl LoadProfile {
    pub fn validate(&self) -> Result<(), ThermalError> {
        if !(self.t_min_c < self.t_max_c) {
            return Err(ThermalError::InvalidProfile(format!(
                "t_min ({}) must be below t_max ({})",
                self.t_min_c, self.t_max_c
            )));
        }
        if !(self.t_step_c > 0.0) {
            return Err(ThermalError::InvalidProfile("t_step must be positive".into()));
        }
        let n = (self.t_max_c - self.t_min_c) / self.t_step_c;
        if (n - n.round()).abs() > 1e-9 {
            return Err(ThermalError::InvalidProfile(format!(
                "range {} not divisible by step {}",
                self.t_max_c - self.t_min_c,
                self.t_step_c
            )));
        }
        if !(self.cycle_duration_h > 0.0) {
            return Err(ThermalError::InvalidProfile(
                "cycle duration must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Set-point sequence of one cycle, in dwell order.
    ///
    /// Ascending: t_min..=t_max. Triangular: the ascent plus the interior
    /// descent (t_max - step down to t_min + step), so consecutive cycles
    /// trace a continuous triangle wave.
    pub fn set_points(&self) -> Vec<f64> {
        let n = ((self.t_max_c - self.t_min_c) / self.t_step_c).round() as usize;
        let mut points: Vec<f64> = (0..=n)
            .map(|i| self.t_min_c + i as f64 * self.t_step_c)
            .collect();
        if self.policy == ProfilePolicy::Triangular {
            for i in (1..n).rev() {
                points.push(self.t_min_c + i as f64 * self.t_step_c);
            }
        }
        points
    }
}

/// Plant constants of the lumped thermal network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    /// Chiller lag: coolant tracks the commanded temperature with this time constant, s.
    pub tau_chiller_s: f64,
    /// Chiller authority: commanded coolant temperature clamp, °C.
    pub oil_min_c: f64,
    pub oil_max_c: f64,
    /// Thermal resistance coolant -> plate, K/W.
    pub r_oil_plate: f64,
    /// Thermal resistance plate -> one housing, K/W.
    pub r_plate_housing: f64,
    /// Thermal resistance housing -> ambient (insulation leak), K/W.
    pub r_housing_amb: f64,
    /// Heat capacity of the cooling plate, J/K.
    pub c_plate: f64,
    /// Heat capacity of one DUT housing, J/K.
    pub c_housing: f64,
    /// Electrical self-heating dissipated in each DUT housing, W.
    pub self_heating_w: f64,
    /// Per-housing scale on the plate-housing resistance (mounting spread).
    pub housing_r_scale: [f64; 3],
    /// Explicit-Euler step cap, s.
    pub max_step_s: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            tau_chiller_s: 20.0,
            oil_min_c: -20.0,
            oil_max_c: 100.0,
            r_oil_plate: 0.02,
            r_plate_housing: 0.05,
            r_housing_amb: 30.0,
            c_plate: 1500.0,
            c_housing: 800.0,
            self_heating_w: 3.0,
            housing_r_scale: [0.98, 1.0, 1.02],
            max_step_s: 0.5,
        }
    }
}

impl PlantParams {
    /// Worst-case steady offset a housing can sit above the input hull,
    /// from self-heating through the parallel resistance to plate/ambient.
    pub fn self_heating_offset_bound(&self) -> f64 {
        let r_par = 1.0 / (1.0 / self.r_plate_housing + 1.0 / self.r_housing_amb);
        self.self_heating_w * r_par.max(self.r_plate_housing)
    }
}

/// One explicit-Euler update of the plant.
///
/// The commanded coolant temperature is clamped to chiller authority, the
/// coolant tracks it with the chiller lag, the plate couples to coolant
/// and housings, each housing couples to plate and ambient and carries
/// the DUT self-heating.
pub fn plant_step(
    state: &ThermalState,
    t_oil_cmd: f64,
    params: &PlantParams,
    dt: f64,
) -> Result<ThermalState, ThermalError> {
    if !state.is_finite() || !t_oil_cmd.is_finite() {
        return Err(ThermalError::NonFinite);
    }
    if dt > params.max_step_s {
        return Err(ThermalError::StepTooLarge {
            dt,
            cap: params.max_step_s,
        });
    }

    let cmd = t_oil_cmd.clamp(params.oil_min_c, params.oil_max_c);
    let t_oil = state.t_oil + dt * (cmd - state.t_oil) / params.tau_chiller_s;

    let mut q_plate = (state.t_oil - state.t_plate) / params.r_oil_plate;
    let mut housings = state.t_housing;
    for i in 0..3 {
        let r_ph = params.r_plate_housing * params.housing_r_scale[i];
        let q_from_plate = (state.t_plate - state.t_housing[i]) / r_ph;
        let q_leak = (state.t_amb - state.t_housing[i]) / params.r_housing_amb;
        q_plate -= q_from_plate;
        housings[i] += dt * (q_from_plate + q_leak + params.self_heating_w) / params.c_housing;
    }
    let t_plate = state.t_plate + dt * q_plate / params.c_plate;

    let clamp = |t: f64| t.clamp(TEMP_CLAMP_C.0, TEMP_CLAMP_C.1);
    Ok(ThermalState {
        t_amb: state.t_amb,
        t_plate: clamp(t_plate),
        t_housing: [clamp(housings[0]), clamp(housings[1]), clamp(housings[2])],
        t_oil: clamp(t_oil),
    })
}

/// Anti-windup behavior of a PI stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AntiWindup {
    /// Integrator frozen while the output is clamped.
    Freeze,
    /// No protection (test use only).
    Off,
}

/// Gains and limits for the cascaded PI controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PiGains {
    pub outer_kp: f64,
    pub outer_ki: f64,
    pub inner_kp: f64,
    pub inner_ki: f64,
    /// Output clamp = chiller authority, °C.
    pub t_oil_min_c: f64,
    pub t_oil_max_c: f64,
    pub anti_windup: AntiWindup,
}

impl Default for PiGains {
    fn default() -> Self {
        Self {
            outer_kp: 2.0,
            outer_ki: 0.02,
            inner_kp: 2.0,
            inner_ki: 0.02,
            t_oil_min_c: -20.0,
            t_oil_max_c: 100.0,
            anti_windup: AntiWindup::Freeze,
        }
    }
}

impl PiGains {
    pub fn validate(&self) -> Result<(), ThermalError> {
        let ok = self.outer_kp >= 0.0
            && self.outer_ki >= 0.0
            && self.inner_kp >= 0.0
            && self.inner_ki >= 0.0
            && self.t_oil_min_c < self.t_oil_max_c;
        if ok {
            Ok(())
        } else {
            Err(ThermalError::InvalidProfile("invalid PI gains".into()))
        }
    }
}

/// Cascaded PI controller: the outer stage tracks the mean housing
/// temperature and produces a desired coolant temperature around the
/// set-point feedforward; the inner stage compensates chiller tracking
/// lag. Both integrators freeze while their stage output is clamped.
#[derive(Debug, Clone)]
pub struct CascadePi {
    pub gains: PiGains,
    outer_i: f64,
    inner_i: f64,
}

impl CascadePi {
    pub fn new(gains: PiGains) -> Self {
        Self {
            gains,
            outer_i: 0.0,
            inner_i: 0.0,
        }
    }

    pub fn integrators(&self) -> (f64, f64) {
        (self.outer_i, self.inner_i)
    }

    pub fn reset(&mut self) {
        self.outer_i = 0.0;
        self.inner_i = 0.0;
    }

    /// One controller update; returns the commanded coolant temperature.
    pub fn step(&mut self, t_set: f64, state: &ThermalState, dt: f64) -> f64 {
        let g = &self.gains;
        let clamp = |x: f64| x.clamp(g.t_oil_min_c, g.t_oil_max_c);

        let e_outer = t_set - state.mean_housing();
        let raw_outer = t_set + g.outer_kp * e_outer + self.outer_i;
        let oil_des = clamp(raw_outer);
        if g.anti_windup == AntiWindup::Off || raw_outer == oil_des {
            self.outer_i += g.outer_ki * e_outer * dt;
        }

        let e_inner = oil_des - state.t_oil;
        let raw_inner = oil_des + g.inner_kp * e_inner + self.inner_i;
        let cmd = clamp(raw_inner);
        if g.anti_windup == AntiWindup::Off || raw_inner == cmd {
            self.inner_i += g.inner_ki * e_inner * dt;
        }
        cmd
    }
}

/// Instantaneous band check: all housings within `epsilon` of the set-point.
pub fn in_band(state: &ThermalState, t_set: f64, epsilon: f64) -> bool {
    state.t_housing.iter().all(|t| (t - t_set).abs() <= epsilon)
}

/// Settling detector with hold time.
///
/// `settled` only after all three housings have stayed inside the epsilon
/// band continuously for the hold duration; leaving the band resets it.
#[derive(Debug, Clone)]
pub struct SettleMonitor {
    pub epsilon: f64,
    pub hold_s: f64,
    within_since: Option<f64>,
}

impl SettleMonitor {
    pub fn new(epsilon: f64, hold_s: f64) -> Self {
        assert!(epsilon > 0.0, "epsilon must be positive");
        assert!(hold_s >= 0.0, "hold must be non-negative");
        Self {
            epsilon,
            hold_s,
            within_since: None,
        }
    }

    pub fn reset(&mut self) {
        self.within_since = None;
    }

    /// Feed one sample at virtual time `now`; returns the settled verdict.
    pub fn update(&mut self, state: &ThermalState, t_set: f64, now: f64) -> bool {
        if in_band(state, t_set, self.epsilon) {
            let since = *self.within_since.get_or_insert(now);
            now - since >= self.hold_s
        } else {
            self.within_since = None;
            false
        }
    }
}

/// One row of the exportable thermal trace.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub t_virtual_s: f64,
    pub t_set: f64,
    pub t_oil: f64,
    pub thermocouples: [f64; 5],
}

/// Writes a thermal trace as CSV with the documented column layout.
pub fn write_trace_csv<W: std::io::Write>(mut w: W, rows: &[TraceRow]) -> std::io::Result<()> {
    writeln!(w, "t_virtual_s,T_set,T_oil,T0,T1,T2,T3,T4")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.t_virtual_s,
            r.t_set,
            r.t_oil,
            r.thermocouples[0],
            r.thermocouples[1],
            r.thermocouples[2],
            r.thermocouples[3],
            r.thermocouples[4]
        )?;
    }
    Ok(())
}

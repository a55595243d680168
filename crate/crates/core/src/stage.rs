//! Simulated high-precision rotary stage carrying the sensor front end.
//!
//! Commands are absolute angles; the move consumes virtual time at the
//! slew rate and lands within a truncated Gaussian of the target. The
//! realized angle is what the stage reports back, and it is the same
//! angle the scene transform uses, so downstream analysis can rely on
//! the report.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Error)]
pub enum StageError {
    #[error("commanded angle {cmd} outside limits [{lo}, {hi}]")]
    OutOfRange { cmd: f64, lo: f64, hi: f64 },
    #[error("invalid stage parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageParams {
    pub slew_deg_per_s: f64,
    /// Positioning noise sigma, degrees; realized error is truncated at 3 sigma.
    pub sigma_phi_deg: f64,
    pub phi_min_deg: f64,
    pub phi_max_deg: f64,
}

impl Default for StageParams {
    fn default() -> Self {
        Self {
            slew_deg_per_s: 30.0,
            sigma_phi_deg: 0.02,
            phi_min_deg: -175.0,
            phi_max_deg: 175.0,
        }
    }
}

impl StageParams {
    pub fn validate(&self) -> Result<(), StageError> {
        if !(self.slew_deg_per_s > 0.0) {
            return Err(StageError::InvalidParams("slew rate must be positive".into()));
        }
        if self.sigma_phi_deg < 0.0 {
            return Err(StageError::InvalidParams("sigma must be non-negative".into()));
        }
        if !(self.phi_min_deg < self.phi_max_deg) {
            return Err(StageError::InvalidParams("empty angle range".into()));
        }
        Ok(())
    }
}

/// Completed motion: realized angle and how long it took.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Motion {
    pub phi_actual_deg: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub params: StageParams,
    phi_actual: f64,
    phi_set: f64,
}

impl Stage {
    pub fn new(params: StageParams, phi_start_deg: f64) -> Self {
        Self {
            params,
            phi_actual: phi_start_deg,
            phi_set: phi_start_deg,
        }
    }

    pub fn phi_actual(&self) -> f64 {
        self.phi_actual
    }

    pub fn phi_set(&self) -> f64 {
        self.phi_set
    }

    /// Moves to an absolute angle. The realized angle is the command plus
    /// a truncated (+/-3 sigma) Gaussian positioning error; the motion
    /// consumes |delta| / slew virtual seconds.
    pub fn move_to(&mut self, phi_cmd: f64, rng: &mut ChaCha8Rng) -> Result<Motion, StageError> {
        let p = &self.params;
        if phi_cmd < p.phi_min_deg || phi_cmd > p.phi_max_deg {
            return Err(StageError::OutOfRange {
                cmd: phi_cmd,
                lo: p.phi_min_deg,
                hi: p.phi_max_deg,
            });
        }
        let duration_s = (phi_cmd - self.phi_set).abs() / p.slew_deg_per_s;
        let err = truncated_normal(rng, p.sigma_phi_deg);
        self.phi_set = phi_cmd;
        self.phi_actual = (phi_cmd + err).clamp(p.phi_min_deg, p.phi_max_deg);
        Ok(Motion {
            phi_actual_deg: self.phi_actual,
            duration_s,
        })
    }
}

/// Zero-mean Gaussian truncated at +/-3 sigma, by rejection.
fn truncated_normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    loop {
        // Box-Muller from two uniforms
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        if z.abs() <= 3.0 {
            return z * sigma;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn move_to_same_angle_is_immediate() {
        let params = StageParams {
            sigma_phi_deg: 0.0,
            ..StageParams::default()
        };
        let mut stage = Stage::new(params, 10.0);
        let m = stage.move_to(10.0, &mut rng()).unwrap();
        assert_eq!(m.duration_s, 0.0);
        assert_eq!(m.phi_actual_deg, 10.0);
    }

    #[test]
    fn motion_time_follows_slew_rate() {
        let params = StageParams {
            sigma_phi_deg: 0.0,
            ..StageParams::default()
        };
        let mut stage = Stage::new(params, 0.0);
        let m = stage.move_to(120.0, &mut rng()).unwrap();
        assert_eq!(m.duration_s, 4.0); // 120 deg at 30 deg/s
    }

    #[test]
    fn positioning_error_truncated_at_three_sigma() {
        let params = StageParams {
            sigma_phi_deg: 0.02,
            ..StageParams::default()
        };
        let mut stage = Stage::new(params, 0.0);
        let mut r = rng();
        for k in 0..5000 {
            let cmd = (k % 120) as f64 - 60.0;
            let m = stage.move_to(cmd, &mut r).unwrap();
            assert!(
                (m.phi_actual_deg - cmd).abs() <= 0.06 + 1e-12,
                "error {} exceeds 3 sigma",
                (m.phi_actual_deg - cmd).abs()
            );
        }
    }

    #[test]
    fn zero_noise_visits_exact_grid() {
        let params = StageParams {
            sigma_phi_deg: 0.0,
            ..StageParams::default()
        };
        let mut stage = Stage::new(params, -60.0);
        let mut r = rng();
        for i in 0..=128 {
            let cmd = -60.0 + i as f64 * 0.9375;
            let m = stage.move_to(cmd, &mut r).unwrap();
            assert_eq!(m.phi_actual_deg, cmd);
        }
    }

    #[test]
    fn out_of_range_command_rejected() {
        let mut stage = Stage::new(StageParams::default(), 0.0);
        assert!(matches!(
            stage.move_to(180.0, &mut rng()),
            Err(StageError::OutOfRange { .. })
        ));
    }
}

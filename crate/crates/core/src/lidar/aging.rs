//! Parametric sensor aging.
//!
//! The degradation laws here are deliberately simple placeholders:
//! exponential laser power decay over Arrhenius-weighted hot time, linear
//! beam widening, Poisson dead-pixel arrival, and a random walk on the
//! intrinsics. They are quarantined in `AgingState`/`AgingParams` so that
//! measured models can replace them without touching the rest of the
//! pipeline.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::rng;

/// Boltzmann constant in eV/K.
pub const KB_EV_PER_K: f64 = 8.617_333_262e-5;

/// Additive perturbation on the true intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IntrinsicsDelta {
    pub dfx: f64,
    pub dfy: f64,
    pub dcx: f64,
    pub dcy: f64,
    pub dk1: f64,
}

/// Random-walk step scales for the intrinsic drift, per sqrt(hot second).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftSigmas {
    pub fx_rel: f64,
    pub fy_rel: f64,
    pub cx_px: f64,
    pub cy_px: f64,
    pub k1: f64,
}

impl Default for DriftSigmas {
    fn default() -> Self {
        Self {
            fx_rel: 2e-5,
            fy_rel: 2e-5,
            cx_px: 2e-3,
            cy_px: 2e-3,
            k1: 2e-5,
        }
    }
}

/// Aging model constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgingParams {
    pub enabled: bool,
    /// Activation energy of the Arrhenius acceleration, eV.
    pub ea_ev: f64,
    /// Reference temperature at which one dwell second counts as one hot second, °C.
    pub t_ref_c: f64,
    /// Laser power decay constant, hot seconds.
    pub tau_p_s: f64,
    /// Beam widening rate per hot second.
    pub widen_alpha_per_s: f64,
    /// Dead pixel arrival rate per hot second.
    pub dead_rate_per_s: f64,
    pub drift: DriftSigmas,
}

impl Default for AgingParams {
    fn default() -> Self {
        Self {
            enabled: false,
            ea_ev: 0.7,
            t_ref_c: 85.0,
            tau_p_s: 2e5,
            widen_alpha_per_s: 5e-7,
            dead_rate_per_s: 1e-4,
            drift: DriftSigmas::default(),
        }
    }
}

/// Accumulated degradation of one sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgingState {
    pub cycle_count: u32,
    /// Dwell time weighted by the Arrhenius acceleration factor, s.
    pub hot_seconds: f64,
    /// Laser output power scale in (0, 1].
    pub eta_p: f64,
    /// Beam profile width multiplier, >= 1.
    pub widen: f64,
    pub dead_pixels: BTreeSet<(u16, u16)>,
    pub drift: IntrinsicsDelta,
}

impl Default for AgingState {
    fn default() -> Self {
        Self {
            cycle_count: 0,
            hot_seconds: 0.0,
            eta_p: 1.0,
            widen: 1.0,
            dead_pixels: BTreeSet::new(),
            drift: IntrinsicsDelta::default(),
        }
    }
}

/// Arrhenius acceleration factor of a dwell at temperature `t_c`
/// relative to the reference temperature.
pub fn arrhenius_factor(t_c: f64, params: &AgingParams) -> f64 {
    let t_k = t_c + 273.15;
    let t_ref_k = params.t_ref_c + 273.15;
    (-params.ea_ev / KB_EV_PER_K * (1.0 / t_k - 1.0 / t_ref_k)).exp()
}

/// Advances the aging state by one dwell.
///
/// Power decay and widening are functions of total hot time, so equal
/// dwells compose exactly like one double dwell at the same temperature.
pub fn advance_aging(
    state: &AgingState,
    dwell_s: f64,
    t_housing_c: f64,
    params: &AgingParams,
    width_px: u16,
    height_px: u16,
    seed: u64,
) -> AgingState {
    assert!(dwell_s >= 0.0, "dwell must be non-negative");
    if !params.enabled || dwell_s == 0.0 {
        return state.clone();
    }
    let d_hot = dwell_s * arrhenius_factor(t_housing_c, params);
    let hot = state.hot_seconds + d_hot;

    let mut out = state.clone();
    out.hot_seconds = hot;
    out.eta_p = (-hot / params.tau_p_s).exp().min(state.eta_p);
    out.widen = (1.0 + params.widen_alpha_per_s * hot).max(state.widen);

    // dead pixels arrive as a Poisson process in hot time
    let lambda = params.dead_rate_per_s * d_hot;
    let n_new = sample_poisson(lambda, rng::child(seed, LABEL_DEAD));
    let total_px = width_px as usize * height_px as usize;
    let mut draw = 0u64;
    for _ in 0..n_new {
        if out.dead_pixels.len() >= total_px {
            break; // the whole imager is dead
        }
        loop {
            let s = rng::stream(seed, &[LABEL_PIXELS, draw]);
            draw += 1;
            let u = (rng::mix(s) % width_px as u64) as u16;
            let v = (rng::mix(s ^ 0xabcd) % height_px as u64) as u16;
            if out.dead_pixels.insert((u, v)) {
                break;
            }
        }
    }

    // intrinsic drift random walk, Brownian in hot time
    let sq = d_hot.sqrt();
    let (z1, z2) = rng::normal_pair(rng::child(seed, LABEL_DRIFT));
    let (z3, z4) = rng::normal_pair(rng::child(seed, LABEL_DRIFT + 1));
    let (z5, _) = rng::normal_pair(rng::child(seed, LABEL_DRIFT + 2));
    let d = &params.drift;
    out.drift.dfx += d.fx_rel * sq * z1;
    out.drift.dfy += d.fy_rel * sq * z2;
    out.drift.dcx += d.cx_px * sq * z3;
    out.drift.dcy += d.cy_px * sq * z4;
    out.drift.dk1 += d.k1 * sq * z5;

    out
}

const LABEL_DEAD: u64 = 0xdead;
const LABEL_PIXELS: u64 = 0x7069_7865;
const LABEL_DRIFT: u64 = 0xd217_f000;

fn sample_poisson(lambda: f64, seed: u64) -> u32 {
    if lambda <= 0.0 {
        return 0;
    }
    // Knuth's method; lambda is small here (well below 1 per dwell)
    let l = (-lambda).exp();
    let mut k = 0u32;
    let mut p = 1.0;
    let mut i = 0u64;
    loop {
        p *= rng::uniform(rng::child(seed, i));
        i += 1;
        if p <= l {
            return k;
        }
        k += 1;
        if k > 10_000 {
            return k;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> AgingParams {
        AgingParams {
            enabled: true,
            ..AgingParams::default()
        }
    }

    #[test]
    fn zero_dwell_is_identity() {
        let s = AgingState::default();
        let next = advance_aging(&s, 0.0, 85.0, &params(), 128, 32, 1);
        assert_eq!(s, next);
    }

    #[test]
    fn disabled_aging_is_identity() {
        let s = AgingState::default();
        let p = AgingParams::default();
        assert!(!p.enabled);
        let next = advance_aging(&s, 1e6, 85.0, &p, 128, 32, 1);
        assert_eq!(s, next);
    }

    #[test]
    fn power_decay_forms_a_semigroup() {
        let p = params();
        let s0 = AgingState::default();
        let once = advance_aging(&s0, 7200.0, 85.0, &p, 128, 32, 1);
        let twice = advance_aging(
            &advance_aging(&s0, 3600.0, 85.0, &p, 128, 32, 1),
            3600.0,
            85.0,
            &p,
            128,
            32,
            2,
        );
        assert!((once.eta_p - twice.eta_p).abs() < 1e-12);
        assert!((once.hot_seconds - twice.hot_seconds).abs() < 1e-9);
    }

    #[test]
    fn arrhenius_ratio_matches_closed_form() {
        let p = params();
        let hot = arrhenius_factor(85.0, &p);
        let cold = arrhenius_factor(-10.0, &p);
        let expected = (p.ea_ev / KB_EV_PER_K * (1.0 / 263.15 - 1.0 / 358.15)).exp();
        assert!((hot / cold - expected).abs() / expected < 1e-12);
        assert!(hot > cold);
        assert!((hot - 1.0).abs() < 1e-12, "85C dwell is the reference");
    }

    #[test]
    fn degradation_is_monotone_over_random_schedules() {
        let p = params();
        let mut s = AgingState::default();
        for k in 0..200u64 {
            let dwell = crate::rng::uniform(crate::rng::mix(k)) * 5000.0;
            let t = -10.0 + crate::rng::uniform(crate::rng::mix(k ^ 77)) * 95.0;
            let next = advance_aging(&s, dwell, t, &p, 128, 32, k);
            assert!(next.eta_p <= s.eta_p);
            assert!(next.widen >= s.widen);
            assert!(next.dead_pixels.is_superset(&s.dead_pixels));
            s = next;
        }
    }

    #[test]
    fn dead_pixels_stay_in_bounds() {
        let p = AgingParams {
            dead_rate_per_s: 0.1,
            ..params()
        };
        let mut s = AgingState::default();
        for k in 0..50u64 {
            s = advance_aging(&s, 1000.0, 85.0, &p, 128, 32, k);
        }
        assert!(!s.dead_pixels.is_empty(), "expected some arrivals at this rate");
        for &(u, v) in &s.dead_pixels {
            assert!(u < 128 && v < 32);
        }
    }
}

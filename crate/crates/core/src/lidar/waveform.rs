//! Return-pulse synthesis and first-two-peak detection.
//!
//! Each pixel sees a sampled intensity time series: Gaussian return
//! pulses on a noise floor. Peak detection finds local maxima above
//! threshold, refines time and amplitude with a three-point parabola,
//! and keeps the first two returns.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::LidarError;

pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

/// Converts a round-trip time of flight to distance.
pub fn tof_to_distance(t_s: f64) -> Result<f64, LidarError> {
    if t_s < 0.0 {
        return Err(LidarError::NegativeTof(t_s));
    }
    Ok(SPEED_OF_LIGHT_M_S * t_s / 2.0)
}

/// Sampling of the per-pixel time series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveformParams {
    pub sample_dt_s: f64,
    pub pulse_fwhm_s: f64,
    /// Extra window past the far-range round trip, s.
    pub window_margin_s: f64,
}

impl Default for WaveformParams {
    fn default() -> Self {
        Self {
            sample_dt_s: 1e-9,
            pulse_fwhm_s: 4e-9,
            window_margin_s: 10e-9,
        }
    }
}

impl WaveformParams {
    /// Number of samples covering [0, 2 * d_far / c + margin].
    pub fn sample_count(&self, d_far_m: f64) -> usize {
        let t_end = 2.0 * d_far_m / SPEED_OF_LIGHT_M_S + self.window_margin_s;
        (t_end / self.sample_dt_s).ceil() as usize + 1
    }

    pub fn sigma_t(&self) -> f64 {
        // FWHM = 2 sqrt(2 ln 2) sigma
        self.pulse_fwhm_s / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
    }
}

/// One return pulse to synthesize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pulse {
    pub t0_s: f64,
    pub amplitude: f64,
}

/// Additive noise model of the receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Dark noise sigma at the current die temperature, DN.
    pub sigma_dark: f64,
    /// Shot-noise coefficient: extra sigma = coeff * sqrt(signal).
    pub shot_coeff: f64,
}

impl NoiseModel {
    pub const OFF: NoiseModel = NoiseModel {
        sigma_dark: 0.0,
        shot_coeff: 0.0,
    };
}

/// Synthesizes the sampled intensity series for a set of return pulses.
pub fn synth_waveform(
    pulses: &[Pulse],
    params: &WaveformParams,
    noise: &NoiseModel,
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let sigma = params.sigma_t();
    let mut out = vec![0.0; n_samples];
    for p in pulses {
        // evaluate only within +/- 6 sigma of the pulse center
        let lo = ((p.t0_s - 6.0 * sigma) / params.sample_dt_s).floor().max(0.0) as usize;
        let hi = (((p.t0_s + 6.0 * sigma) / params.sample_dt_s).ceil() as usize).min(n_samples);
        for (i, slot) in out.iter_mut().enumerate().take(hi).skip(lo) {
            let t = i as f64 * params.sample_dt_s;
            let z = (t - p.t0_s) / sigma;
            *slot += p.amplitude * (-0.5 * z * z).exp();
        }
    }
    if noise.sigma_dark > 0.0 || noise.shot_coeff > 0.0 {
        for slot in out.iter_mut() {
            let var = noise.sigma_dark * noise.sigma_dark
                + noise.shot_coeff * noise.shot_coeff * slot.max(0.0);
            let z: f64 = sample_normal(rng);
            *slot += var.sqrt() * z;
        }
    }
    out
}

fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A detected return: sub-sample time and interpolated peak amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Return {
    pub t_s: f64,
    pub amplitude: f64,
}

/// Detects up to the first two significant returns in a series.
///
/// Local maxima above `threshold` are refined by three-point parabolic
/// interpolation; maxima within one FWHM of an accepted peak are treated
/// as the same return.
///
/// The parabola is fit in the log domain when all three samples are
/// positive, which makes the interpolation exact for clean Gaussian
/// pulses; otherwise it falls back to the plain parabola.
pub fn detect_peaks(series: &[f64], threshold: f64, params: &WaveformParams) -> Vec<Return> {
    let mut out: Vec<Return> = Vec::new();
    let min_sep = params.pulse_fwhm_s;
    for i in 1..series.len().saturating_sub(1) {
        let (ym, y0, yp) = (series[i - 1], series[i], series[i + 1]);
        if y0 <= threshold || y0 < ym || y0 < yp {
            continue;
        }
        let (delta, amp) = interpolate_peak(ym, y0, yp);
        let t = (i as f64 + delta) * params.sample_dt_s;
        if let Some(last) = out.last() {
            if (t - last.t_s).abs() < min_sep {
                continue;
            }
        }
        out.push(Return { t_s: t, amplitude: amp });
        if out.len() == 2 {
            break;
        }
    }
    out
}

/// Three-point parabolic peak refinement: (fractional offset, amplitude).
fn interpolate_peak(ym: f64, y0: f64, yp: f64) -> (f64, f64) {
    if ym > 0.0 && y0 > 0.0 && yp > 0.0 {
        let (lm, l0, lp) = (ym.ln(), y0.ln(), yp.ln());
        let denom = lm - 2.0 * l0 + lp;
        if denom < -1e-12 {
            let d = (0.5 * (lm - lp) / denom).clamp(-0.5, 0.5);
            let peak_log = l0 - 0.25 * (lm - lp) * d;
            return (d, peak_log.exp());
        }
    }
    let denom = ym - 2.0 * y0 + yp;
    if denom.abs() < 1e-300 {
        (0.0, y0)
    } else {
        let d = (0.5 * (ym - yp) / denom).clamp(-0.5, 0.5);
        (d, y0 - 0.25 * (ym - yp) * d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn distance_conversion_examples() {
        assert_eq!(tof_to_distance(0.0).unwrap(), 0.0);
        // 2 * 25 / c = 166.782 ns round trip at the far range limit
        let d = tof_to_distance(166.782e-9).unwrap();
        assert!((d - 25.0).abs() < 1e-4, "d = {d}");
        // the target distance of the rig
        let d = tof_to_distance(7.3384e-9).unwrap();
        assert!((d - 1.1).abs() < 1e-4, "d = {d}");
        assert!(tof_to_distance(-1e-9).is_err());
    }

    #[test]
    fn conversion_is_exact_against_oracle() {
        for i in 0..10_000u64 {
            let t = crate::rng::uniform(crate::rng::mix(i)) * 200e-9;
            let d = tof_to_distance(t).unwrap();
            assert_eq!(d, SPEED_OF_LIGHT_M_S * t / 2.0);
        }
    }

    #[test]
    fn clean_pulse_peaks_at_expected_sample() {
        // round trip for 1.1 m: 7.3384 ns -> nearest 1 ns sample is 7
        let params = WaveformParams::default();
        let t0 = 2.0 * 1.1 / SPEED_OF_LIGHT_M_S;
        let series = synth_waveform(
            &[Pulse { t0_s: t0, amplitude: 100.0 }],
            &params,
            &NoiseModel::OFF,
            params.sample_count(25.0),
            &mut rng(),
        );
        let argmax = series
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(argmax, 7);
    }

    #[test]
    fn miss_produces_pure_noise() {
        let params = WaveformParams::default();
        let n = params.sample_count(25.0);
        let noise = NoiseModel { sigma_dark: 2.0, shot_coeff: 0.0 };
        let series = synth_waveform(&[], &params, &noise, n, &mut rng());
        assert_eq!(series.len(), n);
        let max = series.iter().cloned().fold(f64::MIN, f64::max);
        assert!(max < 12.0, "noise-only series should stay near the floor");
        // and detection at 5 sigma finds nothing
        let returns = detect_peaks(&series, 5.0 * 2.0, &params);
        assert!(returns.is_empty());
    }

    #[test]
    fn detection_recovers_sub_sample_time() {
        let params = WaveformParams::default();
        let t0 = 2.0 * 1.1 / SPEED_OF_LIGHT_M_S;
        let series = synth_waveform(
            &[Pulse { t0_s: t0, amplitude: 500.0 }],
            &params,
            &NoiseModel::OFF,
            params.sample_count(25.0),
            &mut rng(),
        );
        let returns = detect_peaks(&series, 10.0, &params);
        assert_eq!(returns.len(), 1);
        assert!(
            (returns[0].t_s - t0).abs() < 0.5e-9,
            "time error {} ns",
            (returns[0].t_s - t0).abs() * 1e9
        );
        assert!((returns[0].amplitude - 500.0).abs() / 500.0 < 0.02);
    }

    #[test]
    fn two_staggered_pulses_give_two_returns() {
        let params = WaveformParams::default();
        let series = synth_waveform(
            &[
                Pulse { t0_s: 20e-9, amplitude: 300.0 },
                Pulse { t0_s: 60e-9, amplitude: 200.0 },
            ],
            &params,
            &NoiseModel::OFF,
            params.sample_count(25.0),
            &mut rng(),
        );
        let returns = detect_peaks(&series, 10.0, &params);
        assert_eq!(returns.len(), 2);
        assert!(returns[0].t_s < returns[1].t_s);
        assert!((returns[0].t_s - 20e-9).abs() < 0.5e-9);
        assert!((returns[1].t_s - 60e-9).abs() < 0.5e-9);
    }

    #[test]
    fn only_first_two_of_three_pulses_kept() {
        let params = WaveformParams::default();
        let series = synth_waveform(
            &[
                Pulse { t0_s: 20e-9, amplitude: 300.0 },
                Pulse { t0_s: 60e-9, amplitude: 250.0 },
                Pulse { t0_s: 100e-9, amplitude: 200.0 },
            ],
            &params,
            &NoiseModel::OFF,
            params.sample_count(25.0),
            &mut rng(),
        );
        let returns = detect_peaks(&series, 10.0, &params);
        assert_eq!(returns.len(), 2);
        assert!((returns[0].t_s - 20e-9).abs() < 0.5e-9);
        assert!((returns[1].t_s - 60e-9).abs() < 0.5e-9);
    }

    #[test]
    fn all_noise_below_threshold_yields_zero_returns() {
        let params = WaveformParams::default();
        let noise = NoiseModel { sigma_dark: 1.5, shot_coeff: 0.0 };
        let series = synth_waveform(&[], &params, &noise, params.sample_count(25.0), &mut rng());
        let returns = detect_peaks(&series, 5.0 * 1.5, &params);
        assert!(returns.is_empty());
    }
}

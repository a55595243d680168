//! Frame formation: raycast grid, waveform or parametric detection,
//! 12-bit intensity quantization, dead pixel masking, ground-truth
//! sidecar.
//!
//! The full path synthesizes and peak-detects a waveform per pixel. The
//! parametric path skips the waveform and samples intensity and distance
//! from the closed-form means with matched noise; it exists for large
//! campaigns and must satisfy the same invariants. Per-pixel noise is
//! counter-seeded from the frame seed, so results do not depend on
//! evaluation order.

use std::collections::BTreeSet;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rng;

use super::intrinsics::{Direction, Intrinsics};
use super::scene::TargetScene;
use super::waveform::{
    detect_peaks, synth_waveform, NoiseModel, Pulse, WaveformParams, SPEED_OF_LIGHT_M_S,
};
use super::DutSpec;

/// Peak-amplitude noise relative to the per-sample sigma, as realized by
/// the three-point parabolic interpolation in the waveform path. Measured
/// on the default pulse shape and frozen; the parametric path reuses it.
pub const PARAMETRIC_PEAK_SIGMA_SCALE: f64 = 0.93;

/// Detected-time sigma per unit (sigma/amplitude), seconds, as realized
/// by the waveform path on the default pulse shape. Measured and frozen.
pub const PARAMETRIC_TOF_SIGMA_COEFF: f64 = 3.35e-9;

/// Relative spatial distribution of the emitted optical power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BeamProfile {
    Uniform,
    Gaussian { sigma_az_deg: f64, sigma_el_deg: f64 },
}

impl Default for BeamProfile {
    fn default() -> Self {
        BeamProfile::Gaussian {
            sigma_az_deg: 40.0,
            sigma_el_deg: 12.0,
        }
    }
}

impl BeamProfile {
    /// Beam weight in [0, 1] for a sensor-frame direction; `widen`
    /// multiplies the profile widths.
    pub fn eval(&self, dir: Direction, widen: f64) -> f64 {
        match self {
            BeamProfile::Uniform => 1.0,
            BeamProfile::Gaussian {
                sigma_az_deg,
                sigma_el_deg,
            } => {
                let sa = (sigma_az_deg * widen).to_radians();
                let se = (sigma_el_deg * widen).to_radians();
                let za = dir.az_rad / sa;
                let ze = dir.el_rad / se;
                (-0.5 * (za * za + ze * ze)).exp()
            }
        }
    }
}

/// Receiver noise and detection parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    pub enabled: bool,
    /// Dark noise sigma at 25 °C die temperature, DN.
    pub sigma_dark_dn: f64,
    /// Die temperature rise that doubles the dark noise, K.
    pub dark_doubling_k: f64,
    /// Shot noise coefficient: sigma += coeff^2 * signal.
    pub shot_coeff: f64,
    /// Detection threshold in dark-noise sigmas.
    pub detect_sigmas: f64,
    /// Absolute detection floor, DN.
    pub detect_floor_dn: f64,
    /// Systematic range offset of the ToF chain, m.
    pub range_bias_m: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            enabled: true,
            sigma_dark_dn: 1.5,
            dark_doubling_k: 25.0,
            shot_coeff: 0.06,
            detect_sigmas: 5.0,
            detect_floor_dn: 2.0,
            range_bias_m: 0.0,
        }
    }
}

/// Dark noise sigma at the given ToF die temperature.
pub fn sigma_dark_dn(noise: &NoiseParams, t_tof_c: f64) -> f64 {
    if !noise.enabled {
        return 0.0;
    }
    noise.sigma_dark_dn * 2f64.powf((t_tof_c - 25.0) / noise.dark_doubling_k)
}

/// Simulation-only ground truth attached to a frame; never serialized
/// into the detection channels of a bag.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTruth {
    /// Stage angle actually used by the scene transform, degrees.
    pub phi_stage_deg: f64,
    /// Geometric range per pixel (NaN on miss), m.
    pub range_m: Vec<f32>,
    /// Target code per pixel (-1 on miss).
    pub target: Vec<i8>,
    /// Second detected return per pixel, waveform mode only.
    pub second_i: Vec<u16>,
    pub second_d: Vec<f32>,
}

/// One distance/intensity frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: u16,
    pub height: u16,
    /// Intensity DN in [0, 4095], row-major.
    pub intensity: Vec<u16>,
    /// First-return distance in meters, NaN sentinel, row-major.
    pub distance: Vec<f32>,
    pub seq: u32,
    pub t: f64,
    pub dut_id: u8,
    pub truth: Option<FrameTruth>,
}

impl Frame {
    pub fn idx(&self, u: u16, v: u16) -> usize {
        v as usize * self.width as usize + u as usize
    }

    /// Bitwise equality including NaN sentinels.
    pub fn bits_eq(&self, other: &Frame) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.seq == other.seq
            && self.t == other.t
            && self.dut_id == other.dut_id
            && self.intensity == other.intensity
            && self.distance.len() == other.distance.len()
            && self
                .distance
                .iter()
                .zip(&other.distance)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Everything a capture needs to know, borrowed from the owning node.
pub struct CaptureCtx<'a> {
    pub spec: &'a DutSpec,
    /// Effective (true) intrinsics including drift.
    pub k: &'a Intrinsics,
    pub scene: &'a TargetScene,
    pub beam: &'a BeamProfile,
    pub noise: &'a NoiseParams,
    pub wf: &'a WaveformParams,
    /// Overall radiometric gain: DN at 1 m, unit reflectance, full beam.
    pub gain_dn: f64,
    pub eta_p: f64,
    pub widen: f64,
    pub dead: &'a BTreeSet<(u16, u16)>,
    /// ToF die temperature driving the dark noise, °C.
    pub t_tof_c: f64,
    pub phi_stage_deg: f64,
    pub parametric: bool,
    pub with_truth: bool,
}

/// Precomputed per-pixel geometry and noise-free return for one pose.
#[derive(Debug, Clone, Copy)]
pub struct PixelHit {
    pub range_m: f64,
    pub amplitude_dn: f64,
    pub t0_s: f64,
    pub target: i8,
    pub sigma_eff_dn: f64,
}

/// Hit grid shared by all frames captured at one pose.
pub struct HitGrid {
    pub width: u16,
    pub height: u16,
    pub pixels: Vec<Option<PixelHit>>,
    pub threshold_dn: f64,
    pub sigma_dark_dn: f64,
}

/// Per-pixel ray directions for fixed intrinsics; rebuilt only when the
/// intrinsics change, reused across poses.
pub struct DirGrid {
    pub width: u16,
    pub height: u16,
    pub dirs: Vec<Direction>,
    pub half_az_deg: f64,
    pub half_el_deg: f64,
}

/// Unprojects every pixel center once.
pub fn compute_dir_grid(spec: &DutSpec, k: &Intrinsics) -> DirGrid {
    let (w, h) = (spec.width_px, spec.height_px);
    let mut dirs = Vec::with_capacity(w as usize * h as usize);
    for v in 0..h {
        for u in 0..w {
            dirs.push(k.unproject(u as f64, v as f64));
        }
    }
    DirGrid {
        width: w,
        height: h,
        dirs,
        half_az_deg: 0.5 / k.fx * (180.0 / std::f64::consts::PI),
        half_el_deg: 0.5 / k.fy * (180.0 / std::f64::consts::PI),
    }
}

/// Casts every pixel of the imager once for the current pose.
pub fn compute_hit_grid(ctx: &CaptureCtx) -> HitGrid {
    let dirs = compute_dir_grid(ctx.spec, ctx.k);
    compute_hit_grid_with(ctx, &dirs)
}

/// Same as [`compute_hit_grid`] but reuses cached pixel directions.
pub fn compute_hit_grid_with(ctx: &CaptureCtx, dirs: &DirGrid) -> HitGrid {
    use super::scene::hit_from_direction;
    let sigma_dark = sigma_dark_dn(ctx.noise, ctx.t_tof_c);
    let threshold = (ctx.noise.detect_sigmas * sigma_dark).max(ctx.noise.detect_floor_dn);
    let mut pixels = Vec::with_capacity(dirs.dirs.len());
    for dir in &dirs.dirs {
        let hit = hit_from_direction(
            *dir,
            ctx.phi_stage_deg,
            ctx.scene,
            dirs.half_az_deg,
            dirs.half_el_deg,
        );
        pixels.push(hit.map(|hit| {
            let beam = ctx.beam.eval(hit.dir, ctx.widen);
            let amplitude = ctx.gain_dn * ctx.eta_p * beam * hit.rho
                * hit.incidence_rad.cos()
                / (hit.range_m * hit.range_m);
            let sigma_eff = (sigma_dark * sigma_dark
                + ctx.noise.shot_coeff * ctx.noise.shot_coeff * amplitude)
                .sqrt();
            PixelHit {
                range_m: hit.range_m,
                amplitude_dn: amplitude,
                t0_s: 2.0 * (hit.range_m + ctx.noise.range_bias_m) / SPEED_OF_LIGHT_M_S,
                target: hit.target.code(),
                sigma_eff_dn: sigma_eff,
            }
        }));
    }
    HitGrid {
        width: dirs.width,
        height: dirs.height,
        pixels,
        threshold_dn: threshold,
        sigma_dark_dn: sigma_dark,
    }
}

/// Builds one frame from a hit grid.
pub fn frame_from_grid(
    ctx: &CaptureCtx,
    grid: &HitGrid,
    seq: u32,
    t: f64,
    dut_id: u8,
    frame_seed: u64,
) -> Frame {
    let n = grid.pixels.len();
    let dn_max = ctx.spec.dn_max();
    let mut intensity = vec![0u16; n];
    let mut distance = vec![f32::NAN; n];
    let mut truth = if ctx.with_truth {
        Some(FrameTruth {
            phi_stage_deg: ctx.phi_stage_deg,
            range_m: vec![f32::NAN; n],
            target: vec![-1i8; n],
            second_i: vec![0u16; n],
            second_d: vec![f32::NAN; n],
        })
    } else {
        None
    };

    let noise_on = ctx.noise.enabled;
    for (idx, slot) in grid.pixels.iter().enumerate() {
        let u = (idx % grid.width as usize) as u16;
        let v = (idx / grid.width as usize) as u16;
        if let (Some(t), Some(hit)) = (truth.as_mut(), slot.as_ref()) {
            t.range_m[idx] = hit.range_m as f32;
            t.target[idx] = hit.target;
        }
        if ctx.dead.contains(&(u, v)) {
            continue; // forced I = 0, D = sentinel
        }
        let pixel_seed = rng::child(frame_seed, idx as u64);
        if ctx.parametric {
            let Some(hit) = slot else { continue };
            if hit.amplitude_dn <= grid.threshold_dn {
                continue;
            }
            let (z1, z2) = if noise_on {
                rng::normal_pair(pixel_seed)
            } else {
                (0.0, 0.0)
            };
            let amp = hit.amplitude_dn + PARAMETRIC_PEAK_SIGMA_SCALE * hit.sigma_eff_dn * z1;
            let sigma_d = 0.5
                * SPEED_OF_LIGHT_M_S
                * PARAMETRIC_TOF_SIGMA_COEFF
                * hit.sigma_eff_dn
                / hit.amplitude_dn;
            let d = hit.range_m + ctx.noise.range_bias_m + sigma_d * z2;
            intensity[idx] = quantize_dn(amp, dn_max);
            distance[idx] = apply_range_limits(d, ctx.spec);
        } else {
            let pulses: Vec<Pulse> = slot
                .iter()
                .map(|hit| Pulse {
                    t0_s: hit.t0_s,
                    amplitude: hit.amplitude_dn,
                })
                .collect();
            let noise = if noise_on {
                NoiseModel {
                    sigma_dark: grid.sigma_dark_dn,
                    shot_coeff: ctx.noise.shot_coeff,
                }
            } else {
                NoiseModel::OFF
            };
            let mut rng_px = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(pixel_seed);
            let series = synth_waveform(
                &pulses,
                ctx.wf,
                &noise,
                ctx.wf.sample_count(ctx.spec.d_far_m),
                &mut rng_px,
            );
            let returns = detect_peaks(&series, grid.threshold_dn, ctx.wf);
            if let Some(first) = returns.first() {
                intensity[idx] = quantize_dn(first.amplitude, dn_max);
                let d = SPEED_OF_LIGHT_M_S * first.t_s / 2.0;
                distance[idx] = apply_range_limits(d, ctx.spec);
            }
            if let (Some(t), Some(second)) = (truth.as_mut(), returns.get(1)) {
                t.second_i[idx] = quantize_dn(second.amplitude, dn_max);
                t.second_d[idx] = (SPEED_OF_LIGHT_M_S * second.t_s / 2.0) as f32;
            }
        }
    }

    Frame {
        width: grid.width,
        height: grid.height,
        intensity,
        distance,
        seq,
        t,
        dut_id,
        truth,
    }
}

/// One-shot capture: hit grid plus a single frame.
pub fn capture_frame(
    ctx: &CaptureCtx,
    seq: u32,
    t: f64,
    dut_id: u8,
    frame_seed: u64,
) -> Frame {
    let grid = compute_hit_grid(ctx);
    frame_from_grid(ctx, &grid, seq, t, dut_id, frame_seed)
}

fn quantize_dn(amp: f64, dn_max: u16) -> u16 {
    if !amp.is_finite() || amp <= 0.0 {
        return 0;
    }
    let q = amp.round();
    if q >= dn_max as f64 {
        dn_max
    } else {
        q as u16
    }
}

fn apply_range_limits(d: f64, spec: &DutSpec) -> f32 {
    if d < spec.d_near_m || d > spec.d_far_m {
        f32::NAN
    } else {
        d as f32
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lidar::TargetId;

    fn base_ctx<'a>(
        spec: &'a DutSpec,
        k: &'a Intrinsics,
        scene: &'a TargetScene,
        beam: &'a BeamProfile,
        noise: &'a NoiseParams,
        wf: &'a WaveformParams,
        dead: &'a BTreeSet<(u16, u16)>,
    ) -> CaptureCtx<'a> {
        CaptureCtx {
            spec,
            k,
            scene,
            beam,
            noise,
            wf,
            gain_dn: 4500.0,
            eta_p: 1.0,
            widen: 1.0,
            dead,
            t_tof_c: 40.0,
            phi_stage_deg: 0.0,
            parametric: false,
            with_truth: true,
        }
    }

    #[test]
    fn stripe_ratio_matches_reflectance_ratio() {
        // noise off, uniform beam: mean DN over the 0.80 stripe against
        // the 0.18 stripe equals 80/18 within 2%
        let spec = DutSpec::default();
        let k = Intrinsics::default();
        let scene = TargetScene::default();
        let beam = BeamProfile::Uniform;
        let noise = NoiseParams {
            enabled: false,
            ..NoiseParams::default()
        };
        let wf = WaveformParams::default();
        let dead = BTreeSet::new();
        let ctx = base_ctx(&spec, &k, &scene, &beam, &noise, &wf, &dead);
        let frame = capture_frame(&ctx, 0, 0.0, 0, 1);

        // gate to stripe interiors so edge-blended pixels stay out
        let mean_over = |stripe: usize| {
            let s = scene.stripes[stripe];
            let mut sum = 0.0;
            let mut n = 0usize;
            for v in 10..22u16 {
                for u in 0..spec.width_px {
                    let dir = k.unproject(u as f64, v as f64);
                    let az = dir.az_rad.to_degrees();
                    if az > s.az_min_deg + 1.5 && az < s.az_max_deg - 1.5 {
                        let idx = frame.idx(u, v);
                        sum += frame.intensity[idx] as f64;
                        n += 1;
                    }
                }
            }
            assert!(n > 20, "too few interior pixels for stripe {stripe}");
            sum / n as f64
        };
        let hi = mean_over(2);
        let lo = mean_over(0);
        let ratio = hi / lo;
        let expected = 0.80 / 0.18;
        assert!(
            (ratio - expected).abs() / expected < 0.02,
            "ratio {ratio} vs {expected}"
        );
    }

    #[test]
    fn dead_pixel_forced_in_every_capture() {
        let spec = DutSpec::default();
        let k = Intrinsics::default();
        let scene = TargetScene::default();
        let beam = BeamProfile::default();
        let noise = NoiseParams::default();
        let wf = WaveformParams::default();
        let dead: BTreeSet<(u16, u16)> = [(5u16, 7u16)].into_iter().collect();
        let mut ctx = base_ctx(&spec, &k, &scene, &beam, &noise, &wf, &dead);
        for (mode, seed) in [(false, 11u64), (true, 12u64)] {
            ctx.parametric = mode;
            let frame = capture_frame(&ctx, 0, 0.0, 0, seed);
            let idx = frame.idx(5, 7);
            assert_eq!(frame.intensity[idx], 0);
            assert!(frame.distance[idx].is_nan());
        }
    }

    #[test]
    fn miss_region_gives_floor_and_sentinel() {
        let spec = DutSpec::default();
        let k = Intrinsics::default();
        // narrow the panels so a fully void pose exists within stage travel
        let mut scene = TargetScene::default();
        scene.panels[0].az_min_deg = -100.0;
        scene.panels[1].az_max_deg = 100.0;
        let beam = BeamProfile::default();
        let noise = NoiseParams::default();
        let wf = WaveformParams::default();
        let dead = BTreeSet::new();
        let mut ctx = base_ctx(&spec, &k, &scene, &beam, &noise, &wf, &dead);
        // frustum spans [110, 230] deg world azimuth: all void
        ctx.phi_stage_deg = 170.0;
        let frame = capture_frame(&ctx, 0, 0.0, 0, 3);
        let sigma = sigma_dark_dn(&noise, ctx.t_tof_c);
        let thr = (noise.detect_sigmas * sigma).max(noise.detect_floor_dn);
        let n_hits = frame.intensity.iter().filter(|&&i| i > 0).count();
        // rare noise-triggered false alarms are allowed, nothing more
        assert!(
            n_hits < frame.intensity.len() / 100,
            "{n_hits} unexpected detections in a void scene"
        );
        for (i, d) in frame.intensity.iter().zip(&frame.distance) {
            if *i == 0 {
                assert!(d.is_nan());
            } else {
                assert!((*i as f64) >= thr * 0.8);
            }
        }
    }

    #[test]
    fn eq1_conversion_is_exact_in_frames() {
        // the stored distance must equal c * t_hat / 2 with no extra error;
        // noise off makes t_hat reproducible here
        let spec = DutSpec::default();
        let k = Intrinsics::default();
        let scene = TargetScene::default();
        let beam = BeamProfile::Uniform;
        let noise = NoiseParams {
            enabled: false,
            ..NoiseParams::default()
        };
        let wf = WaveformParams::default();
        let dead = BTreeSet::new();
        let ctx = base_ctx(&spec, &k, &scene, &beam, &noise, &wf, &dead);
        let grid = compute_hit_grid(&ctx);
        let frame = frame_from_grid(&ctx, &grid, 0, 0.0, 0, 5);
        // redo the detection for a few pixels and compare bit-exactly
        for idx in [frame.idx(64, 15), frame.idx(10, 8), frame.idx(100, 20)] {
            let Some(hit) = &grid.pixels[idx] else { continue };
            let series = synth_waveform(
                &[Pulse { t0_s: hit.t0_s, amplitude: hit.amplitude_dn }],
                &wf,
                &NoiseModel::OFF,
                wf.sample_count(spec.d_far_m),
                &mut <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
            );
            let returns = detect_peaks(&series, grid.threshold_dn, &wf);
            let t_hat = returns[0].t_s;
            let expected = (SPEED_OF_LIGHT_M_S * t_hat / 2.0) as f32;
            assert_eq!(frame.distance[idx].to_bits(), expected.to_bits());
        }
    }

    #[test]
    fn intensity_never_exceeds_dn_max() {
        let spec = DutSpec::default();
        let k = Intrinsics::default();
        let scene = TargetScene::default();
        let beam = BeamProfile::Uniform;
        let noise = NoiseParams::default();
        let wf = WaveformParams::default();
        let dead = BTreeSet::new();
        let mut ctx = base_ctx(&spec, &k, &scene, &beam, &noise, &wf, &dead);
        ctx.gain_dn = 80_000.0; // drive the bright stripe into saturation
        ctx.parametric = true;
        let frame = capture_frame(&ctx, 0, 0.0, 0, 9);
        let max = *frame.intensity.iter().max().unwrap();
        assert_eq!(max, 4095, "saturation must clamp at full scale");
        assert!(frame.intensity.iter().all(|&i| i <= 4095));
    }

    #[test]
    fn parametric_noise_constants_track_waveform_mode() {
        // the frozen constants must keep the two modes statistically
        // interchangeable: compare per-pixel noise over repeated captures
        let spec = DutSpec::default();
        let k = Intrinsics::default();
        let scene = TargetScene::default();
        let beam = BeamProfile::default();
        let noise = NoiseParams::default();
        let wf = WaveformParams::default();
        let dead = BTreeSet::new();
        let mut ctx = base_ctx(&spec, &k, &scene, &beam, &noise, &wf, &dead);

        // interiors of the three stripes at phi = 0
        let probe = [(55u16, 15u16), (64, 15), (75, 10)];
        let n_frames = 120;
        let mut collect = |parametric: bool, seed0: u64| {
            ctx.parametric = parametric;
            let grid = compute_hit_grid(&ctx);
            let mut i_samples = vec![Vec::new(); probe.len()];
            let mut d_samples = vec![Vec::new(); probe.len()];
            for f in 0..n_frames {
                let frame = frame_from_grid(&ctx, &grid, f, 0.0, 0, crate::rng::stream(seed0, &[f as u64]));
                for (p, &(u, v)) in probe.iter().enumerate() {
                    let idx = frame.idx(u, v);
                    i_samples[p].push(frame.intensity[idx] as f64);
                    if frame.distance[idx].is_finite() {
                        d_samples[p].push(frame.distance[idx] as f64);
                    }
                }
            }
            (i_samples, d_samples)
        };
        let std = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        };

        let (iw, dw) = collect(false, 100);
        let (ip, dp) = collect(true, 200);
        for p in 0..probe.len() {
            let (si_w, si_p) = (std(&iw[p]), std(&ip[p]));
            let (sd_w, sd_p) = (std(&dw[p]), std(&dp[p]));
            assert!(
                (si_p / si_w - 1.0).abs() < 0.35,
                "intensity sigma mismatch at probe {p}: wf {si_w:.2}, par {si_p:.2}"
            );
            assert!(
                (sd_p / sd_w - 1.0).abs() < 0.35,
                "distance sigma mismatch at probe {p}: wf {sd_w:.5}, par {sd_p:.5}"
            );
        }
    }

    #[test]
    fn parametric_and_waveform_agree_on_structure() {
        let spec = DutSpec::default();
        let k = Intrinsics::default();
        let scene = TargetScene::default();
        let beam = BeamProfile::default();
        let noise = NoiseParams {
            enabled: false,
            ..NoiseParams::default()
        };
        let wf = WaveformParams::default();
        let dead = BTreeSet::new();
        let mut ctx = base_ctx(&spec, &k, &scene, &beam, &noise, &wf, &dead);
        let full = capture_frame(&ctx, 0, 0.0, 0, 21);
        ctx.parametric = true;
        let par = capture_frame(&ctx, 0, 0.0, 0, 21);
        let mut n_both = 0;
        for idx in 0..full.intensity.len() {
            let a = full.distance[idx].is_nan();
            let b = par.distance[idx].is_nan();
            assert_eq!(a, b, "modes disagree on hit structure at {idx}");
            if !a {
                n_both += 1;
                let dd = (full.distance[idx] - par.distance[idx]).abs();
                assert!(dd < 2e-3, "distance mismatch {dd} m at {idx}");
                let di = (full.intensity[idx] as f64 - par.intensity[idx] as f64).abs();
                let rel = di / par.intensity[idx].max(1) as f64;
                assert!(rel < 0.05, "intensity mismatch {rel} at {idx}");
            }
        }
        assert!(n_both > 1000, "expected plenty of common hits, got {n_both}");
    }
}

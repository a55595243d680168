//! Direction-wise intensity profiles and beam profile recovery.
//!
//! Sweeping the frustum over a fixed stripe region of interest samples
//! every pixel direction at the same range and reflectance. Compensating
//! the collected intensities by range, reflectance and incidence and
//! averaging over the three stripes recovers the relative optical output
//! power distribution of the laser.

use crate::lidar::{compute_dir_grid, DutSpec, Intrinsics, TargetScene};

use super::sweep::SweepData;
use super::AnalysisError;

/// Mean received intensity per pixel direction for one stripe.
#[derive(Debug, Clone)]
pub struct IntensityProfile {
    pub stripe_index: usize,
    pub rho: f64,
    /// Mean intensity per pixel direction, None where the sweep never
    /// put that direction inside the stripe ROI.
    pub mean_i: Vec<Option<f64>>,
    pub samples_per_pixel: Vec<u32>,
    /// Directions with no coverage (flagged, never interpolated).
    pub gaps: usize,
}

/// Collects the per-direction intensity profile for one stripe.
///
/// A sample qualifies when the pixel ray, placed with the reported stage
/// angle, lands inside the central `roi_fraction` of the stripe's
/// azimuth band.
pub fn intensity_profile(
    sweep: &SweepData,
    dut: usize,
    scene: &TargetScene,
    spec: &DutSpec,
    k_nominal: &Intrinsics,
    stripe_index: usize,
    roi_fraction: f64,
) -> Result<IntensityProfile, AnalysisError> {
    sweep.validate_complete()?;
    let stripe = scene
        .stripes
        .get(stripe_index)
        .ok_or_else(|| AnalysisError::Coverage(format!("no stripe {stripe_index}")))?;
    let width = stripe.az_max_deg - stripe.az_min_deg;
    let margin = (1.0 - roi_fraction) * 0.5 * width;
    let (roi_lo, roi_hi) = (stripe.az_min_deg + margin, stripe.az_max_deg - margin);

    let dirs = compute_dir_grid(spec, k_nominal);
    let n_px = sweep.pixel_count();
    let mut sum = vec![0.0f64; n_px];
    let mut count = vec![0u32; n_px];

    for (pos, stage) in sweep.stage.iter().enumerate() {
        let pose = &sweep.poses[dut][pos];
        let phi = stage.phi_actual_deg;
        for idx in 0..n_px {
            let dir = dirs.dirs[idx];
            let az_world = dir.az_rad.to_degrees() + phi;
            if az_world >= roi_lo && az_world <= roi_hi {
                sum[idx] += pose.stats.mean_i[idx];
                count[idx] += 1;
            }
        }
    }

    let mut gaps = 0usize;
    let mean_i: Vec<Option<f64>> = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| {
            if c > 0 {
                Some(s / c as f64)
            } else {
                gaps += 1;
                None
            }
        })
        .collect();

    Ok(IntensityProfile {
        stripe_index,
        rho: stripe.rho,
        mean_i,
        samples_per_pixel: count,
        gaps,
    })
}

/// Recovered relative beam profile.
#[derive(Debug, Clone)]
pub struct BeamEstimate {
    /// Normalized profile per pixel direction, max = 1; None where no
    /// stripe ever covered the direction.
    pub profile: Vec<Option<f64>>,
    /// Compensated peak before normalization (power-tracking scalar).
    pub peak_raw: f64,
    /// Worst relative disagreement between per-stripe compensated
    /// profiles over directions covered by at least two stripes.
    pub stripe_residual: f64,
    pub covered_directions: usize,
}

/// Fuses per-stripe profiles into the relative beam profile.
///
/// Each sample is compensated by `D_gt^2 / (rho * cos(incidence))`
/// using the declared geometry, averaged across the stripes that cover
/// the direction, then normalized to a unit maximum.
pub fn beam_profile(
    profiles: &[IntensityProfile],
    scene: &TargetScene,
    spec: &DutSpec,
    k_nominal: &Intrinsics,
) -> Result<BeamEstimate, AnalysisError> {
    if profiles.is_empty() {
        return Err(AnalysisError::Coverage("no stripe profiles supplied".into()));
    }
    let dirs = compute_dir_grid(spec, k_nominal);
    let n_px = dirs.dirs.len();

    let mut fused = vec![None; n_px];
    let mut residual: f64 = 0.0;
    let mut covered = 0usize;
    let mut peak_raw: f64 = 0.0;

    for idx in 0..n_px {
        let dir = dirs.dirs[idx];
        let d_gt = scene.range_at_elevation(dir.el_rad);
        let cos_inc = dir.el_rad.abs().cos();
        let mut vals: Vec<f64> = Vec::with_capacity(profiles.len());
        for p in profiles {
            if let Some(i) = p.mean_i[idx] {
                vals.push(i * d_gt * d_gt / (p.rho * cos_inc));
            }
        }
        if vals.is_empty() {
            continue;
        }
        covered += 1;
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        if vals.len() >= 2 && mean > 0.0 {
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            residual = residual.max((hi - lo) / mean);
        }
        peak_raw = peak_raw.max(mean);
        fused[idx] = Some(mean);
    }

    if covered == 0 || peak_raw <= 0.0 {
        return Err(AnalysisError::Coverage(
            "no direction covered by any stripe".into(),
        ));
    }
    let profile = fused
        .into_iter()
        .map(|v| v.map(|x| x / peak_raw))
        .collect();

    Ok(BeamEstimate {
        profile,
        peak_raw,
        stripe_residual: residual,
        covered_directions: covered,
    })
}

//! Distance accuracy against the geometric ground truth.
//!
//! The ground truth is recomputed from the reported stage angle and the
//! declared scene geometry, never from the simulator's internal sidecar.
//! The intensity dependence shows up in the per-decile spread.

use crate::lidar::{compute_dir_grid, DutSpec, Intrinsics, TargetScene};

use super::sweep::SweepData;
use super::AnalysisError;

/// Per-decile distance-error statistics.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecileStats {
    pub mean_intensity: f64,
    pub n: usize,
    pub mean_delta_d_m: f64,
    pub std_delta_d_m: f64,
    /// Median absolute deviation around the decile median, m.
    pub mad_delta_d_m: f64,
}

/// Distance accuracy of one sensor over one sweep.
#[derive(Debug, Clone)]
pub struct DistanceAccuracy {
    /// Per-pixel mean error over all covering poses, NaN where never covered.
    pub delta_d_map: Vec<f64>,
    pub mean_delta_d_m: f64,
    pub median_abs_delta_d_m: f64,
    pub n_samples: usize,
    /// Pixel-pose samples skipped because the ray missed the targets.
    pub excluded_off_target: usize,
    pub deciles: Vec<DecileStats>,
}

/// Computes per-pixel distance error from recorded sweeps.
pub fn distance_accuracy(
    sweep: &SweepData,
    dut: usize,
    scene: &TargetScene,
    spec: &DutSpec,
    k_nominal: &Intrinsics,
    n_bins: usize,
) -> Result<DistanceAccuracy, AnalysisError> {
    sweep.validate_complete()?;
    let dirs = compute_dir_grid(spec, k_nominal);
    let n_px = sweep.pixel_count();

    let mut sum = vec![0.0f64; n_px];
    let mut count = vec![0u32; n_px];
    let mut samples: Vec<(f64, f64)> = Vec::new(); // (mean intensity, delta d)
    let mut excluded = 0usize;

    for (pos, stage) in sweep.stage.iter().enumerate() {
        let pose = &sweep.poses[dut][pos];
        let phi = stage.phi_actual_deg;
        for idx in 0..n_px {
            let mean_d = pose.stats.mean_d[idx];
            if !mean_d.is_finite() {
                continue;
            }
            let dir = dirs.dirs[idx];
            let az_world = dir.az_rad.to_degrees() + phi;
            let el_deg = dir.el_rad.to_degrees();
            if scene.surface_at(az_world, el_deg).is_none() {
                excluded += 1;
                continue;
            }
            let d_gt = scene.range_at_elevation(dir.el_rad);
            let delta = mean_d - d_gt;
            sum[idx] += delta;
            count[idx] += 1;
            samples.push((pose.stats.mean_i[idx], delta));
        }
    }

    let delta_d_map: Vec<f64> = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect();

    let n_samples = samples.len();
    let mean = if n_samples > 0 {
        samples.iter().map(|(_, d)| d).sum::<f64>() / n_samples as f64
    } else {
        f64::NAN
    };
    let mut abs: Vec<f64> = samples.iter().map(|(_, d)| d.abs()).collect();
    abs.sort_by(|a, b| a.total_cmp(b));
    let median_abs = if abs.is_empty() {
        f64::NAN
    } else {
        abs[abs.len() / 2]
    };

    // intensity deciles
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut deciles = Vec::new();
    if n_samples >= n_bins && n_bins > 0 {
        let per = n_samples / n_bins;
        for b in 0..n_bins {
            let lo = b * per;
            let hi = if b + 1 == n_bins { n_samples } else { lo + per };
            let chunk = &samples[lo..hi];
            let n = chunk.len();
            let mi = chunk.iter().map(|(i, _)| i).sum::<f64>() / n as f64;
            let md = chunk.iter().map(|(_, d)| d).sum::<f64>() / n as f64;
            let var = chunk.iter().map(|(_, d)| (d - md) * (d - md)).sum::<f64>()
                / (n.max(2) - 1) as f64;
            let mut devs: Vec<f64> = {
                let mut vals: Vec<f64> = chunk.iter().map(|(_, d)| *d).collect();
                vals.sort_by(|a, b| a.total_cmp(b));
                let med = vals[n / 2];
                chunk.iter().map(|(_, d)| (d - med).abs()).collect()
            };
            devs.sort_by(|a, b| a.total_cmp(b));
            deciles.push(DecileStats {
                mean_intensity: mi,
                n,
                mean_delta_d_m: md,
                std_delta_d_m: var.sqrt(),
                mad_delta_d_m: devs[n / 2],
            });
        }
    }

    Ok(DistanceAccuracy {
        delta_d_map,
        mean_delta_d_m: mean,
        median_abs_delta_d_m: median_abs,
        n_samples,
        excluded_off_target: excluded,
        deciles,
    })
}

//! Dead pixel identification over a full sweep.

use std::collections::BTreeSet;

use crate::config::AnalysisParams;
use crate::lidar::{sigma_dark_dn, NoiseParams};

use super::sweep::SweepData;
use super::AnalysisError;

/// Identifies dead pixels of one sensor.
///
/// A pixel is dead only when its intensity stays below the dead
/// threshold across every position and frame of the sweep. Because the
/// sweep drags every pixel across bright targets, pixels that merely
/// point at void for part of the sweep are not flagged.
///
/// The threshold is the noise floor plus `dead_threshold_sigmas` dark
/// sigmas at the recorded die temperature, floored at an absolute DN so
/// noise-free recordings still have a sane cutoff.
pub fn dead_pixels(
    sweep: &SweepData,
    dut: usize,
    noise: &NoiseParams,
    params: &AnalysisParams,
) -> Result<(usize, BTreeSet<(u16, u16)>), AnalysisError> {
    sweep.validate_complete()?;

    // die temperature from recorded telemetry (mean over the bag)
    let telem = &sweep.telemetry[dut];
    let t_tof = if telem.is_empty() {
        25.0
    } else {
        telem.iter().map(|t| t.data.t_tof_c).sum::<f64>() / telem.len() as f64
    };
    let sigma = sigma_dark_dn(noise, t_tof);
    let threshold = (params.dead_threshold_sigmas * sigma).max(params.dead_threshold_floor_dn);

    let n_px = sweep.pixel_count();
    let mut max_i = vec![0u16; n_px];
    for pose in &sweep.poses[dut] {
        for (idx, &m) in pose.stats.max_i.iter().enumerate() {
            max_i[idx] = max_i[idx].max(m);
        }
    }

    let mut dead = BTreeSet::new();
    for (idx, &m) in max_i.iter().enumerate() {
        if (m as f64) < threshold {
            let u = (idx % sweep.width as usize) as u16;
            let v = (idx / sweep.width as usize) as u16;
            dead.insert((u, v));
        }
    }
    Ok((dead.len(), dead))
}

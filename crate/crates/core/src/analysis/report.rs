//! Per-bag metric reports and their file outputs: JSON scalars, CSV
//! matrices for the per-pixel fields, and PGM heatmaps for eyeballing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::lidar::Intrinsics;

use super::calib::{delta_k, recalibrate, Calibration, DeltaK};
use super::dead::dead_pixels;
use super::distance::{distance_accuracy, DecileStats};
use super::profile::{beam_profile, intensity_profile};
use super::sweep::SweepData;
use super::AnalysisError;

/// Scalar metrics of one sensor over one bag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DutReport {
    pub dut: u8,
    pub n_dead: usize,
    pub dead_pixels: Vec<(u16, u16)>,
    /// Mean over pixels of the per-pose-RMS temporal intensity sigma, DN.
    pub sigma_i_mean_dn: f64,
    /// Mean over valid pixels of the temporal distance sigma, m.
    pub sigma_d_mean_m: f64,
    pub mean_delta_d_m: f64,
    pub median_abs_delta_d_m: f64,
    pub excluded_off_target: usize,
    pub deciles: Vec<DecileStats>,
    /// Compensated beam peak before normalization (power tracking).
    pub beam_peak_raw: f64,
    pub stripe_residual: f64,
    pub beam_covered_directions: usize,
    /// Unreachable directions per stripe profile.
    pub profile_gaps: Vec<usize>,
    pub calibration: Calibration,
    /// Deviation from the cycle-0 baseline, when one is known.
    pub delta_k: Option<DeltaK>,
    /// Power scale inferred from the laser current telemetry.
    pub eta_p_hat: f64,
    pub i_laser_mean_a: f64,
    pub t_tof_mean_c: f64,
}

/// Full report for one bag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub bag_path: String,
    pub cycle: u32,
    pub step_index: u16,
    pub t_set_c: f64,
    /// Hash of the exact configuration used for the campaign.
    pub config_sha256: String,
    /// Recording start (virtual time); all frame timestamps are later.
    pub bag_created_t: f64,
    pub first_frame_t: Option<f64>,
    pub duts: Vec<DutReport>,
}

/// Per-pixel matrices backing the CSV and PGM outputs.
#[derive(Debug, Clone)]
pub struct DutArtifacts {
    pub width: u16,
    pub height: u16,
    pub sigma_i: Vec<f64>,
    pub sigma_d: Vec<f64>,
    pub delta_d: Vec<f64>,
    pub beam: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ReportArtifacts {
    pub per_dut: Vec<DutArtifacts>,
}

/// Runs the whole metric suite over one bag.
///
/// `baseline_k` carries the cycle-0 calibration per sensor when known;
/// it feeds the relative intrinsics deviation.
pub fn analyze_bag(
    path: &Path,
    cfg: &Config,
    config_sha256: &str,
    baseline_k: &[Option<Intrinsics>],
) -> Result<(MetricsReport, ReportArtifacts), AnalysisError> {
    let sweep = SweepData::load(path)?;
    sweep.validate_complete()?;
    let n_px = sweep.pixel_count();

    let mut duts = Vec::new();
    let mut artifacts = Vec::new();
    for d in 0..sweep.n_duts {
        let (n_dead, dead) = dead_pixels(&sweep, d, &cfg.noise, &cfg.analysis)?;

        // per-pixel RMS of the per-pose temporal sigmas
        let mut sig_i = vec![0.0f64; n_px];
        let mut sig_d = vec![0.0f64; n_px];
        let mut sig_d_n = vec![0u32; n_px];
        for pose in &sweep.poses[d] {
            for idx in 0..n_px {
                let s = pose.stats.sigma_i[idx];
                sig_i[idx] += s * s;
                let sd = pose.stats.sigma_d[idx];
                if sd.is_finite() {
                    sig_d[idx] += sd * sd;
                    sig_d_n[idx] += 1;
                }
            }
        }
        let n_poses = sweep.poses[d].len() as f64;
        let sigma_i_map: Vec<f64> = sig_i.iter().map(|s| (s / n_poses).sqrt()).collect();
        let sigma_d_map: Vec<f64> = sig_d
            .iter()
            .zip(&sig_d_n)
            .map(|(s, &n)| {
                if n > 0 {
                    (s / n as f64).sqrt()
                } else {
                    f64::NAN
                }
            })
            .collect();
        let sigma_i_mean = sigma_i_map.iter().sum::<f64>() / n_px as f64;
        let d_valid: Vec<f64> = sigma_d_map.iter().cloned().filter(|x| x.is_finite()).collect();
        let sigma_d_mean = if d_valid.is_empty() {
            f64::NAN
        } else {
            d_valid.iter().sum::<f64>() / d_valid.len() as f64
        };

        let acc = distance_accuracy(
            &sweep,
            d,
            &cfg.scene,
            &cfg.dut,
            &cfg.intrinsics_nominal,
            cfg.analysis.intensity_bins,
        )?;

        let mut profiles = Vec::new();
        for s in 0..cfg.scene.stripes.len() {
            profiles.push(intensity_profile(
                &sweep,
                d,
                &cfg.scene,
                &cfg.dut,
                &cfg.intrinsics_nominal,
                s,
                cfg.analysis.stripe_roi_fraction,
            )?);
        }
        let beam = beam_profile(&profiles, &cfg.scene, &cfg.dut, &cfg.intrinsics_nominal)?;

        let calibration = recalibrate(&sweep, d, &cfg.scene, &cfg.intrinsics_nominal, &cfg.analysis)?;
        let dk = baseline_k
            .get(d)
            .and_then(|b| b.as_ref())
            .map(|base| delta_k(&calibration.k, base));

        let telem = &sweep.telemetry[d];
        let (i_laser_mean, t_tof_mean) = if telem.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (
                telem.iter().map(|t| t.data.i_laser_a).sum::<f64>() / telem.len() as f64,
                telem.iter().map(|t| t.data.t_tof_c).sum::<f64>() / telem.len() as f64,
            )
        };
        let eta_p_hat = cfg.telemetry.i_laser_nominal_a / i_laser_mean;

        duts.push(DutReport {
            dut: d as u8,
            n_dead,
            dead_pixels: dead.iter().cloned().collect(),
            sigma_i_mean_dn: sigma_i_mean,
            sigma_d_mean_m: sigma_d_mean,
            mean_delta_d_m: acc.mean_delta_d_m,
            median_abs_delta_d_m: acc.median_abs_delta_d_m,
            excluded_off_target: acc.excluded_off_target,
            deciles: acc.deciles.clone(),
            beam_peak_raw: beam.peak_raw,
            stripe_residual: beam.stripe_residual,
            beam_covered_directions: beam.covered_directions,
            profile_gaps: profiles.iter().map(|p| p.gaps).collect(),
            calibration,
            delta_k: dk,
            eta_p_hat,
            i_laser_mean_a: i_laser_mean,
            t_tof_mean_c: t_tof_mean,
        });
        artifacts.push(DutArtifacts {
            width: sweep.width,
            height: sweep.height,
            sigma_i: sigma_i_map,
            sigma_d: sigma_d_map,
            delta_d: acc.delta_d_map,
            beam: beam
                .profile
                .iter()
                .map(|v| v.unwrap_or(f64::NAN))
                .collect(),
        });
    }

    let report = MetricsReport {
        schema_version: 1,
        bag_path: path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        cycle: sweep.header.cycle,
        step_index: sweep.header.step_index,
        t_set_c: sweep.header.t_set_c as f64,
        config_sha256: config_sha256.to_string(),
        bag_created_t: sweep.header.created_t,
        first_frame_t: sweep.first_frame_t,
        duts,
    };
    Ok((report, ReportArtifacts { per_dut: artifacts }))
}

/// Writes the JSON report plus CSV matrices and PGM heatmaps; returns
/// the written paths. Re-running overwrites identically.
pub fn write_report_files(
    report: &MetricsReport,
    artifacts: &ReportArtifacts,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, AnalysisError> {
    std::fs::create_dir_all(out_dir)?;
    let stem = report
        .bag_path
        .trim_end_matches(".arlb")
        .replace('/', "_");
    let mut written = Vec::new();

    let json_path = out_dir.join(format!("{stem}.report.json"));
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(report).expect("report serializes"),
    )?;
    written.push(json_path);

    for (d, art) in artifacts.per_dut.iter().enumerate() {
        for (name, data) in [
            ("sigma_i", &art.sigma_i),
            ("sigma_d", &art.sigma_d),
            ("delta_d", &art.delta_d),
            ("beam", &art.beam),
        ] {
            let csv_path = out_dir.join(format!("{stem}.dut{d}.{name}.csv"));
            write_matrix_csv(&csv_path, data, art.width, art.height)?;
            written.push(csv_path);
            let pgm_path = out_dir.join(format!("{stem}.dut{d}.{name}.pgm"));
            write_matrix_pgm(&pgm_path, data, art.width, art.height)?;
            written.push(pgm_path);
        }
    }
    Ok(written)
}

fn write_matrix_csv(path: &Path, data: &[f64], w: u16, h: u16) -> Result<(), AnalysisError> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in 0..h as usize {
        let mut line = String::new();
        for u in 0..w as usize {
            if u > 0 {
                line.push(',');
            }
            let x = data[v * w as usize + u];
            if x.is_finite() {
                line.push_str(&format!("{x}"));
            } else {
                line.push_str("nan");
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Plain-text PGM (P2), min-max normalized over finite values; NaN maps
/// to black.
fn write_matrix_pgm(path: &Path, data: &[f64], w: u16, h: u16) -> Result<(), AnalysisError> {
    use std::io::Write;
    let finite: Vec<f64> = data.iter().cloned().filter(|x| x.is_finite()).collect();
    let (lo, hi) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "P2")?;
    writeln!(out, "{w} {h}")?;
    writeln!(out, "255")?;
    for v in 0..h as usize {
        let mut line = String::new();
        for u in 0..w as usize {
            if u > 0 {
                line.push(' ');
            }
            let x = data[v * w as usize + u];
            let g = if x.is_finite() {
                (((x - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            };
            line.push_str(&g.to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

//! Cross-cycle degradation series from per-bag reports.

use serde::{Deserialize, Serialize};

use super::report::MetricsReport;
use super::stats::linear_fit;
use super::AnalysisError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub cycle: u32,
    pub value: f64,
}

/// One metric tracked at one set-point for one sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTrend {
    pub metric: String,
    pub step_index: u16,
    pub t_set_c: f64,
    pub dut: u8,
    pub points: Vec<MetricPoint>,
    pub slope_per_cycle: f64,
    pub intercept: f64,
    pub residual_rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    pub schema_version: u32,
    pub n_cycles: usize,
    pub metrics: Vec<MetricTrend>,
}

const TRACKED: &[&str] = &[
    "beam_peak_raw",
    "eta_p_hat",
    "n_dead",
    "sigma_i_mean_dn",
    "sigma_d_mean_m",
    "mean_delta_d_m",
    "delta_k_fx_rel",
    "delta_k_fy_rel",
    "delta_k_k1_abs",
    "i_laser_mean_a",
];

fn metric_value(report: &MetricsReport, dut: usize, metric: &str) -> Option<f64> {
    let d = report.duts.get(dut)?;
    Some(match metric {
        "beam_peak_raw" => d.beam_peak_raw,
        "eta_p_hat" => d.eta_p_hat,
        "n_dead" => d.n_dead as f64,
        "sigma_i_mean_dn" => d.sigma_i_mean_dn,
        "sigma_d_mean_m" => d.sigma_d_mean_m,
        "mean_delta_d_m" => d.mean_delta_d_m,
        "delta_k_fx_rel" => d.delta_k.as_ref()?.fx_rel,
        "delta_k_fy_rel" => d.delta_k.as_ref()?.fy_rel,
        "delta_k_k1_abs" => d.delta_k.as_ref()?.k1_abs,
        "i_laser_mean_a" => d.i_laser_mean_a,
        _ => return None,
    })
}

/// Builds degradation time series over cycles at matched set-points.
///
/// No extrapolation: the summary carries the raw points plus a least
/// squares slope per metric.
pub fn trend(reports: &[MetricsReport]) -> Result<TrendSummary, AnalysisError> {
    let mut cycles: Vec<u32> = reports.iter().map(|r| r.cycle).collect();
    cycles.sort_unstable();
    cycles.dedup();
    if cycles.len() < 2 {
        return Err(AnalysisError::Alignment(format!(
            "need at least 2 cycles, got {}",
            cycles.len()
        )));
    }

    // matched set-points: every cycle must carry the same (step, T_set) grid
    let mut grid: Vec<(u16, f64)> = Vec::new();
    for r in reports.iter().filter(|r| r.cycle == cycles[0]) {
        grid.push((r.step_index, r.t_set_c));
    }
    grid.sort_by(|a, b| a.0.cmp(&b.0));
    for &c in &cycles[1..] {
        let mut g: Vec<(u16, f64)> = reports
            .iter()
            .filter(|r| r.cycle == c)
            .map(|r| (r.step_index, r.t_set_c))
            .collect();
        g.sort_by(|a, b| a.0.cmp(&b.0));
        if g != grid {
            return Err(AnalysisError::Alignment(format!(
                "cycle {c} has a different set-point grid than cycle {}",
                cycles[0]
            )));
        }
    }

    let n_duts = reports.iter().map(|r| r.duts.len()).max().unwrap_or(0);
    let mut metrics = Vec::new();
    for &(step, t_set) in &grid {
        for dut in 0..n_duts {
            for &name in TRACKED {
                let mut points = Vec::new();
                for &c in &cycles {
                    let report = reports
                        .iter()
                        .find(|r| r.cycle == c && r.step_index == step);
                    if let Some(r) = report {
                        if let Some(v) = metric_value(r, dut, name) {
                            if v.is_finite() {
                                points.push(MetricPoint { cycle: c, value: v });
                            }
                        }
                    }
                }
                if points.len() < 2 {
                    continue;
                }
                let xs: Vec<f64> = points.iter().map(|p| p.cycle as f64).collect();
                let ys: Vec<f64> = points.iter().map(|p| p.value).collect();
                let (slope, intercept, rms) = linear_fit(&xs, &ys);
                metrics.push(MetricTrend {
                    metric: name.to_string(),
                    step_index: step,
                    t_set_c: t_set,
                    dut: dut as u8,
                    points,
                    slope_per_cycle: slope,
                    intercept,
                    residual_rms: rms,
                });
            }
        }
    }

    Ok(TrendSummary {
        schema_version: 1,
        n_cycles: cycles.len(),
        metrics,
    })
}

impl TrendSummary {
    /// Tidy CSV: one row per (cycle, step, dut, metric).
    pub fn write_tidy_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "cycle,step_index,t_set_c,dut,metric,value")?;
        for m in &self.metrics {
            for p in &m.points {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    p.cycle, m.step_index, m.t_set_c, m.dut, m.metric, p.value
                )?;
            }
        }
        Ok(())
    }
}

//! Intrinsic recalibration from the panel marker grids.
//!
//! Every qualifying pose contributes a temporal-mean intensity image.
//! Marker blobs are segmented by threshold and connected components,
//! located by intensity-weighted centroid, and matched to the known
//! marker grid projected with the reported stage angle. The intrinsics
//! are then fit by Gauss-Newton on the reprojection error, with
//! Levenberg damping when a step stalls.

use serde::{Deserialize, Serialize};

use crate::config::AnalysisParams;
use crate::lidar::{Direction, Intrinsics, TargetScene};

use super::sweep::SweepData;
use super::AnalysisError;

/// Stage-angle windows that qualify a pose for calibration, degrees.
pub const CALIB_WINDOWS_DEG: [(f64, f64); 2] = [(-60.0, -30.0), (30.0, 60.0)];

/// One matched marker observation.
#[derive(Debug, Clone, Copy)]
pub struct Correspondence {
    /// Marker center in world angles, degrees.
    pub az_world_deg: f64,
    pub el_deg: f64,
    /// Reported stage angle of the pose, degrees.
    pub phi_deg: f64,
    /// Detected centroid, pixels.
    pub u: f64,
    pub v: f64,
}

/// Result of one recalibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub k: Intrinsics,
    pub rms_px: f64,
    pub n_correspondences: usize,
    pub n_poses: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Per-parameter deviation from a baseline calibration. Focal constants
/// and the principal point are relative; k1 is an absolute difference
/// because its baseline may be zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaK {
    pub fx_rel: f64,
    pub fy_rel: f64,
    pub cx_rel: f64,
    pub cy_rel: f64,
    pub k1_abs: f64,
    /// Marks the k1 entry as an absolute difference.
    pub k1_is_absolute: bool,
}

pub fn delta_k(k: &Intrinsics, baseline: &Intrinsics) -> DeltaK {
    DeltaK {
        fx_rel: (k.fx - baseline.fx) / baseline.fx,
        fy_rel: (k.fy - baseline.fy) / baseline.fy,
        cx_rel: (k.cx - baseline.cx) / baseline.cx,
        cy_rel: (k.cy - baseline.cy) / baseline.cy,
        k1_abs: k.k1 - baseline.k1,
        k1_is_absolute: true,
    }
}

/// Recalibrates one sensor from a recorded sweep.
pub fn recalibrate(
    sweep: &SweepData,
    dut: usize,
    scene: &TargetScene,
    k_nominal: &Intrinsics,
    params: &AnalysisParams,
) -> Result<Calibration, AnalysisError> {
    sweep.validate_complete()?;
    let mut corrs = Vec::new();
    let mut n_poses = 0usize;
    for (pos, stage) in sweep.stage.iter().enumerate() {
        if pos % params.calib_pose_stride != 0 {
            continue;
        }
        let phi = stage.phi_actual_deg;
        if !CALIB_WINDOWS_DEG
            .iter()
            .any(|(lo, hi)| phi >= *lo && phi <= *hi)
        {
            continue;
        }
        n_poses += 1;
        let pose = &sweep.poses[dut][pos];
        collect_pose_correspondences(
            &pose.stats.mean_i,
            sweep.width,
            sweep.height,
            phi,
            scene,
            k_nominal,
            &mut corrs,
        );
    }
    if corrs.len() < params.min_marker_detections {
        return Err(AnalysisError::CalibrationInsufficient {
            got: corrs.len(),
            need: params.min_marker_detections,
        });
    }
    let (k, rms, iters, converged) =
        fit_intrinsics(&corrs, *k_nominal, params.max_solver_iterations);
    Ok(Calibration {
        k,
        rms_px: rms,
        n_correspondences: corrs.len(),
        n_poses,
        iterations: iters,
        converged,
    })
}

/// Segments one mean image and matches blobs to projected markers.
fn collect_pose_correspondences(
    mean_i: &[f64],
    width: u16,
    height: u16,
    phi_deg: f64,
    scene: &TargetScene,
    k_nominal: &Intrinsics,
    out: &mut Vec<Correspondence>,
) {
    let (w, h) = (width as usize, height as usize);
    let n_px = w * h;

    // mask: pixels whose nominal ray falls on a panel band, expanded by
    // the marker radius so no blob is clipped by the mask itself
    let expand = scene.markers.radius_deg;
    let mut mask = vec![false; n_px];
    let mut masked_vals = Vec::new();
    for v in 0..h {
        for u in 0..w {
            let dir = k_nominal.unproject(u as f64, v as f64);
            let az_world = dir.az_rad.to_degrees() + phi_deg;
            let on_panel = scene
                .panels
                .iter()
                .any(|p| az_world >= p.az_min_deg - expand && az_world <= p.az_max_deg + expand);
            if on_panel {
                mask[v * w + u] = true;
                masked_vals.push(mean_i[v * w + u]);
            }
        }
    }
    if masked_vals.len() < 16 {
        return;
    }
    let threshold = otsu_threshold(&masked_vals);

    // connected components (4-neighborhood) above threshold
    let mut labels = vec![0u32; n_px];
    let mut blobs: Vec<Blob> = Vec::new();
    for v in 0..h {
        for u in 0..w {
            let idx = v * w + u;
            if !mask[idx] || labels[idx] != 0 || mean_i[idx] <= threshold {
                continue;
            }
            // flood fill
            let label = blobs.len() as u32 + 1;
            let mut blob = Blob::default();
            let mut stack = vec![idx];
            labels[idx] = label;
            while let Some(i) = stack.pop() {
                let (ui, vi) = (i % w, i / w);
                blob.area += 1;
                let wgt = (mean_i[i] - threshold).max(0.0);
                blob.w_sum += wgt;
                blob.u_sum += wgt * ui as f64;
                blob.v_sum += wgt * vi as f64;
                blob.touches_border |= ui == 0 || ui == w - 1 || vi == 0 || vi == h - 1;
                let mut push = |j: usize| {
                    if mask[j] && labels[j] == 0 && mean_i[j] > threshold {
                        labels[j] = label;
                        stack.push(j);
                    }
                };
                if ui > 0 {
                    push(i - 1);
                }
                if ui + 1 < w {
                    push(i + 1);
                }
                if vi > 0 {
                    push(i - w);
                }
                if vi + 1 < h {
                    push(i + w);
                }
            }
            blobs.push(blob);
        }
    }

    // candidate blobs: plausible marker size, fully inside the frame
    let candidates: Vec<(f64, f64)> = blobs
        .iter()
        .filter(|b| b.area >= 3 && b.area <= 200 && !b.touches_border && b.w_sum > 0.0)
        .map(|b| (b.u_sum / b.w_sum, b.v_sum / b.w_sum))
        .collect();
    if candidates.is_empty() {
        return;
    }

    // predicted marker positions under the nominal intrinsics
    let mut predictions = Vec::new();
    for m in scene.marker_positions() {
        let dir = Direction::from_degrees(m.az_deg - phi_deg, m.el_deg);
        let Ok((u, v)) = k_nominal.project(dir) else { continue };
        if u < 1.0 || u > (w - 2) as f64 || v < 1.0 || v > (h - 2) as f64 {
            continue;
        }
        predictions.push((m, u, v));
    }

    // greedy nearest matching with a tight gate and uniqueness
    const GATE_PX: f64 = 2.5;
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (ci, &(cu, cv)) in candidates.iter().enumerate() {
        for (pi, &(_, pu, pv)) in predictions.iter().enumerate() {
            let d2 = (cu - pu) * (cu - pu) + (cv - pv) * (cv - pv);
            if d2 <= GATE_PX * GATE_PX {
                pairs.push((d2, ci, pi));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_c = vec![false; candidates.len()];
    let mut used_p = vec![false; predictions.len()];
    for (_, ci, pi) in pairs {
        if used_c[ci] || used_p[pi] {
            continue;
        }
        used_c[ci] = true;
        used_p[pi] = true;
        let (m, _, _) = predictions[pi];
        let (cu, cv) = candidates[ci];
        out.push(Correspondence {
            az_world_deg: m.az_deg,
            el_deg: m.el_deg,
            phi_deg,
            u: cu,
            v: cv,
        });
    }
}

#[derive(Default)]
struct Blob {
    area: usize,
    w_sum: f64,
    u_sum: f64,
    v_sum: f64,
    touches_border: bool,
}

/// Otsu's threshold over a 256-bin histogram.
fn otsu_threshold(vals: &[f64]) -> f64 {
    let max = vals.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return 0.0;
    }
    const BINS: usize = 256;
    let mut hist = [0u64; BINS];
    for &v in vals {
        let b = ((v / max * (BINS - 1) as f64) as usize).min(BINS - 1);
        hist[b] += 1;
    }
    let total: u64 = vals.len() as u64;
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let mut w_b = 0u64;
    let mut sum_b = 0.0;
    let mut best = (0.0f64, 0usize);
    for t in 0..BINS {
        w_b += hist[t];
        if w_b == 0 {
            continue;
        }
        let w_f = total - w_b;
        if w_f == 0 {
            break;
        }
        sum_b += t as f64 * hist[t] as f64;
        let m_b = sum_b / w_b as f64;
        let m_f = (sum_all - sum_b) / w_f as f64;
        let between = w_b as f64 * w_f as f64 * (m_b - m_f) * (m_b - m_f);
        if between > best.0 {
            best = (between, t);
        }
    }
    (best.1 as f64 + 0.5) / (BINS - 1) as f64 * max
}

/// Reprojection residuals for a parameter vector.
fn residuals(corrs: &[Correspondence], p: &[f64; 5], out: &mut Vec<f64>) {
    let k = Intrinsics::from_array(*p);
    out.clear();
    for c in corrs {
        let dir = Direction::from_degrees(c.az_world_deg - c.phi_deg, c.el_deg);
        match k.project(dir) {
            Ok((u, v)) => {
                out.push(c.u - u);
                out.push(c.v - v);
            }
            Err(_) => {
                // out-of-model directions contribute a flat penalty
                out.push(10.0);
                out.push(10.0);
            }
        }
    }
}

fn cost_of(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Gauss-Newton with numeric central-difference Jacobian and Levenberg
/// damping on stalled steps.
fn fit_intrinsics(
    corrs: &[Correspondence],
    k0: Intrinsics,
    max_iters: usize,
) -> (Intrinsics, f64, usize, bool) {
    let mut p = k0.as_array();
    let steps = [1e-4, 1e-4, 1e-4, 1e-4, 1e-7];
    let n_r = corrs.len() * 2;
    let mut r = Vec::with_capacity(n_r);
    let mut r_plus = Vec::with_capacity(n_r);
    let mut r_minus = Vec::with_capacity(n_r);
    residuals(corrs, &p, &mut r);
    let mut cost = cost_of(&r);
    let mut lambda = 0.0f64;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..max_iters {
        iterations = iter + 1;
        // numeric Jacobian, column by column
        let mut jt_j = [[0.0f64; 5]; 5];
        let mut jt_r = [0.0f64; 5];
        let mut jac = vec![[0.0f64; 5]; n_r];
        for col in 0..5 {
            let mut pp = p;
            pp[col] += steps[col];
            residuals(corrs, &pp, &mut r_plus);
            let mut pm = p;
            pm[col] -= steps[col];
            residuals(corrs, &pm, &mut r_minus);
            let inv = 1.0 / (2.0 * steps[col]);
            for i in 0..n_r {
                jac[i][col] = (r_plus[i] - r_minus[i]) * inv;
            }
        }
        for i in 0..n_r {
            for a in 0..5 {
                jt_r[a] += jac[i][a] * r[i];
                for b in a..5 {
                    jt_j[a][b] += jac[i][a] * jac[i][b];
                }
            }
        }
        for a in 0..5 {
            for b in 0..a {
                jt_j[a][b] = jt_j[b][a];
            }
        }

        // damped step attempts
        let mut accepted = false;
        for _ in 0..10 {
            let mut m = jt_j;
            for (a, row) in m.iter_mut().enumerate() {
                row[a] += lambda * jt_j[a][a].max(1e-12);
            }
            let Some(delta) = solve5(&m, &jt_r) else {
                lambda = (lambda * 10.0).max(1e-6);
                continue;
            };
            let mut p_new = p;
            for a in 0..5 {
                p_new[a] += delta[a];
            }
            residuals(corrs, &p_new, &mut r_plus);
            let cost_new = cost_of(&r_plus);
            if cost_new < cost {
                let rel_drop = (cost - cost_new) / cost.max(1e-300);
                p = p_new;
                std::mem::swap(&mut r, &mut r_plus);
                cost = cost_new;
                lambda = if lambda > 0.0 { lambda / 3.0 } else { 0.0 };
                if lambda < 1e-9 {
                    lambda = 0.0;
                }
                accepted = true;
                if rel_drop < 1e-12 {
                    converged = true;
                }
                break;
            }
            lambda = if lambda == 0.0 { 1e-4 } else { lambda * 10.0 };
        }
        if !accepted || converged {
            converged = converged || !accepted; // stalled at a minimum
            break;
        }
    }

    let rms = (cost / n_r as f64).sqrt();
    (Intrinsics::from_array(p), rms, iterations, converged)
}

/// Solves a 5x5 system by Gaussian elimination with partial pivoting;
/// returns the Gauss-Newton step (negative gradient direction).
fn solve5(m: &[[f64; 5]; 5], rhs: &[f64; 5]) -> Option<[f64; 5]> {
    let mut a = *m;
    let mut b = [0.0f64; 5];
    for i in 0..5 {
        b[i] = -rhs[i];
    }
    for col in 0..5 {
        let mut pivot = col;
        for row in col + 1..5 {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let inv = 1.0 / a[col][col];
        for row in col + 1..5 {
            let f = a[row][col] * inv;
            for k in col..5 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0f64; 5];
    for col in (0..5).rev() {
        let mut s = b[col];
        for k in col + 1..5 {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_corrs(k_true: &Intrinsics, noise_px: f64) -> Vec<Correspondence> {
        let scene = TargetScene::default();
        let mut out = Vec::new();
        let mut n = 0u64;
        for phi in [-60.0, -50.0, -40.0, -30.0, 30.0, 40.0, 50.0, 60.0] {
            for m in scene.marker_positions() {
                let dir = Direction::from_degrees(m.az_deg - phi, m.el_deg);
                let Ok((u, v)) = k_true.project(dir) else { continue };
                if !(1.0..=126.0).contains(&u) || !(1.0..=30.0).contains(&v) {
                    continue;
                }
                let (z1, z2) = crate::rng::normal_pair(crate::rng::stream(99, &[n]));
                n += 1;
                out.push(Correspondence {
                    az_world_deg: m.az_deg,
                    el_deg: m.el_deg,
                    phi_deg: phi,
                    u: u + noise_px * z1,
                    v: v + noise_px * z2,
                });
            }
        }
        out
    }

    #[test]
    fn noise_free_fit_recovers_truth() {
        let k_true = Intrinsics {
            fx: 62.0,
            fy: 66.0,
            cx: 63.1,
            cy: 15.8,
            k1: -0.012,
        };
        let corrs = synthetic_corrs(&k_true, 0.0);
        assert!(corrs.len() > 300);
        let (k, rms, _, _) = fit_intrinsics(&corrs, Intrinsics::default(), 100);
        assert!(rms < 1e-9, "rms {rms}");
        assert!((k.fx - k_true.fx).abs() / k_true.fx < 1e-6);
        assert!((k.fy - k_true.fy).abs() / k_true.fy < 1e-6);
        assert!((k.cx - k_true.cx).abs() < 1e-4);
        assert!((k.cy - k_true.cy).abs() < 1e-4);
        assert!((k.k1 - k_true.k1).abs() < 1e-6);
    }

    #[test]
    fn noisy_fit_stays_close() {
        let k_true = Intrinsics::default();
        let corrs = synthetic_corrs(&k_true, 0.1);
        let (k, rms, _, _) = fit_intrinsics(&corrs, Intrinsics::default(), 100);
        assert!(rms < 0.2);
        assert!((k.fx - k_true.fx).abs() / k_true.fx < 2e-3);
    }

    #[test]
    fn delta_k_examples() {
        let base = Intrinsics::default();
        let same = delta_k(&base, &base);
        assert_eq!(same.fx_rel, 0.0);
        assert_eq!(same.k1_abs, 0.0);

        let drifted = Intrinsics {
            fx: 62.337,
            ..base
        };
        let d = delta_k(&drifted, &base);
        assert!((d.fx_rel - 0.02).abs() < 1e-4, "fx_rel {}", d.fx_rel);

        let k1_only = Intrinsics { k1: 0.01, ..base };
        let d = delta_k(&k1_only, &base);
        assert_eq!(d.k1_abs, 0.01);
        assert!(d.k1_is_absolute);
    }

    #[test]
    fn otsu_separates_bimodal_data() {
        let mut vals = vec![];
        for i in 0..500 {
            vals.push(100.0 + (i % 40) as f64);
        }
        for i in 0..200 {
            vals.push(2000.0 + (i % 150) as f64);
        }
        let t = otsu_threshold(&vals);
        assert!(t > 139.0 && t < 2000.0, "threshold {t}");
    }

    #[test]
    fn solve5_inverts_known_system() {
        let m = [
            [4.0, 1.0, 0.0, 0.0, 0.0],
            [1.0, 3.0, 1.0, 0.0, 0.0],
            [0.0, 1.0, 2.0, 1.0, 0.0],
            [0.0, 0.0, 1.0, 5.0, 1.0],
            [0.0, 0.0, 0.0, 1.0, 4.0],
        ];
        let x_true = [1.0, -2.0, 3.0, -4.0, 5.0];
        let mut rhs = [0.0; 5];
        for i in 0..5 {
            for j in 0..5 {
                rhs[i] += m[i][j] * x_true[j];
            }
        }
        // solve5 solves M x = -rhs
        let neg = solve5(&m, &rhs).unwrap();
        for i in 0..5 {
            assert!((neg[i] + x_true[i]).abs() < 1e-10);
        }
    }
}

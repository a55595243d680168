//! Per-pixel temporal statistics over a fixed-pose frame stack.

use crate::bag::FrameRecord;

use super::AnalysisError;

/// Per-pixel sample statistics of an n-frame stack.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalStats {
    pub width: u16,
    pub height: u16,
    pub n_frames: usize,
    pub mean_i: Vec<f64>,
    /// Sample standard deviation (n-1 denominator).
    pub sigma_i: Vec<f64>,
    /// NaN for pixels excluded by the sentinel rule.
    pub mean_d: Vec<f64>,
    pub sigma_d: Vec<f64>,
    /// Pixels excluded from the distance statistics because at least one
    /// frame carried the sentinel.
    pub excluded_d: usize,
    /// Largest intensity seen per pixel across the stack.
    pub max_i: Vec<u16>,
}

/// Computes per-pixel temporal mean and sample standard deviation.
///
/// Intensity statistics cover every frame; distance statistics drop any
/// pixel that carries the NaN sentinel in at least one frame (the count
/// of dropped pixels is reported). Uses Welford's one-pass update.
pub fn temporal_stats(frames: &[FrameRecord]) -> Result<TemporalStats, AnalysisError> {
    if frames.len() < 2 {
        return Err(AnalysisError::TooFewFrames {
            need: 2,
            got: frames.len(),
        });
    }
    let (w, h) = (frames[0].width, frames[0].height);
    let n_px = w as usize * h as usize;
    for f in frames {
        if f.width != w || f.height != h {
            return Err(AnalysisError::Coverage(
                "frame dimensions differ within one stack".into(),
            ));
        }
    }

    let n = frames.len();
    let mut mean_i = vec![0.0f64; n_px];
    let mut m2_i = vec![0.0f64; n_px];
    let mut mean_d = vec![0.0f64; n_px];
    let mut m2_d = vec![0.0f64; n_px];
    let mut d_ok = vec![true; n_px];
    let mut max_i = vec![0u16; n_px];

    for (k, f) in frames.iter().enumerate() {
        let count = (k + 1) as f64;
        for idx in 0..n_px {
            let x = f.intensity[idx] as f64;
            let delta = x - mean_i[idx];
            mean_i[idx] += delta / count;
            m2_i[idx] += delta * (x - mean_i[idx]);
            max_i[idx] = max_i[idx].max(f.intensity[idx]);

            let d = f.distance[idx];
            if d.is_finite() {
                let d = d as f64;
                let delta = d - mean_d[idx];
                mean_d[idx] += delta / count;
                m2_d[idx] += delta * (d - mean_d[idx]);
            } else {
                d_ok[idx] = false;
            }
        }
    }

    let denom = (n - 1) as f64;
    let sigma_i: Vec<f64> = m2_i.iter().map(|m2| (m2 / denom).sqrt()).collect();
    let mut sigma_d = vec![f64::NAN; n_px];
    let mut mean_d_out = vec![f64::NAN; n_px];
    let mut excluded = 0usize;
    for idx in 0..n_px {
        if d_ok[idx] {
            sigma_d[idx] = (m2_d[idx] / denom).sqrt();
            mean_d_out[idx] = mean_d[idx];
        } else {
            excluded += 1;
        }
    }

    Ok(TemporalStats {
        width: w,
        height: h,
        n_frames: n,
        mean_i,
        sigma_i,
        mean_d: mean_d_out,
        sigma_d,
        excluded_d: excluded,
        max_i,
    })
}

/// Spearman rank correlation of two equally long samples.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ra = ranks(a);
    let rb = ranks(b);
    pearson(&ra, &rb)
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]).then(i.cmp(&j)));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0; // average rank for ties
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    num / (va * vb).sqrt()
}

/// Least-squares line fit; returns (slope, intercept, residual RMS).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let intercept = my - slope * mx;
    let mut rss = 0.0;
    for (a, b) in x.iter().zip(y) {
        let e = b - (intercept + slope * a);
        rss += e * e;
    }
    (slope, intercept, (rss / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_of(i: Vec<u16>, d: Vec<f32>) -> FrameRecord {
        let n = i.len();
        let w = n as u16;
        FrameRecord {
            dut_id: 0,
            seq: 0,
            width: w,
            height: 1,
            intensity: i,
            distance: d,
        }
    }

    /// Naive two-pass oracle, textbook formulas, independent of the
    /// Welford path above.
    fn naive_stats(frames: &[FrameRecord]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let n_px = frames[0].intensity.len();
        let n = frames.len() as f64;
        let mut mean_i = vec![0.0; n_px];
        let mut mean_d = vec![0.0; n_px];
        let mut sigma_i = vec![0.0; n_px];
        let mut sigma_d = vec![0.0; n_px];
        for idx in 0..n_px {
            let vals_i: Vec<f64> = frames.iter().map(|f| f.intensity[idx] as f64).collect();
            mean_i[idx] = vals_i.iter().sum::<f64>() / n;
            sigma_i[idx] = (vals_i.iter().map(|x| (x - mean_i[idx]).powi(2)).sum::<f64>()
                / (n - 1.0))
                .sqrt();
            let vals_d: Vec<f64> = frames.iter().map(|f| f.distance[idx] as f64).collect();
            if vals_d.iter().all(|d| d.is_finite()) {
                mean_d[idx] = vals_d.iter().sum::<f64>() / n;
                sigma_d[idx] = (vals_d.iter().map(|x| (x - mean_d[idx]).powi(2)).sum::<f64>()
                    / (n - 1.0))
                    .sqrt();
            } else {
                mean_d[idx] = f64::NAN;
                sigma_d[idx] = f64::NAN;
            }
        }
        (mean_i, sigma_i, mean_d, sigma_d)
    }

    #[test]
    fn identical_frames_have_zero_sigma() {
        let frames: Vec<FrameRecord> = (0..10)
            .map(|_| frame_of(vec![100, 200, 300], vec![1.0, 2.0, 3.0]))
            .collect();
        let s = temporal_stats(&frames).unwrap();
        assert!(s.sigma_i.iter().all(|&x| x == 0.0));
        assert!(s.sigma_d.iter().all(|&x| x == 0.0));
        assert_eq!(s.mean_i, vec![100.0, 200.0, 300.0]);
    }

    #[test]
    fn one_through_ten_matches_frozen_values() {
        // values 1..10: mean 5.5, sample std sqrt(82.5/9) = 3.027650354
        let frames: Vec<FrameRecord> = (1..=10)
            .map(|k| frame_of(vec![k as u16], vec![k as f32]))
            .collect();
        let s = temporal_stats(&frames).unwrap();
        assert!((s.mean_i[0] - 5.5).abs() < 1e-12);
        assert!((s.sigma_i[0] - 3.027650354).abs() < 1e-8);
        assert!((s.sigma_d[0] - 3.027650354).abs() < 1e-6);
    }

    #[test]
    fn welford_matches_naive_oracle_on_random_stacks() {
        for trial in 0..100u64 {
            let n_frames = 3 + (crate::rng::mix(trial) % 8) as usize;
            let n_px = 16;
            let frames: Vec<FrameRecord> = (0..n_frames)
                .map(|k| {
                    let i: Vec<u16> = (0..n_px)
                        .map(|p| {
                            (crate::rng::uniform(crate::rng::stream(
                                trial,
                                &[k as u64, p as u64, 1],
                            )) * 4095.0) as u16
                        })
                        .collect();
                    let d: Vec<f32> = (0..n_px)
                        .map(|p| {
                            let s = crate::rng::stream(trial, &[k as u64, p as u64, 2]);
                            if crate::rng::uniform(crate::rng::child(s, 9)) < 0.05 {
                                f32::NAN
                            } else {
                                (0.5 + crate::rng::uniform(s) * 24.5) as f32
                            }
                        })
                        .collect();
                    frame_of(i, d)
                })
                .collect();
            let s = temporal_stats(&frames).unwrap();
            let (mi, si, md, sd) = naive_stats(&frames);
            for idx in 0..n_px {
                let close = |a: f64, b: f64| {
                    if a.is_nan() && b.is_nan() {
                        return true;
                    }
                    let denom = b.abs().max(1e-30);
                    (a - b).abs() / denom < 1e-9 || (a - b).abs() < 1e-12
                };
                assert!(close(s.mean_i[idx], mi[idx]), "mean_i {idx}");
                assert!(close(s.sigma_i[idx], si[idx]), "sigma_i {idx}");
                assert!(close(s.mean_d[idx], md[idx]), "mean_d {idx}");
                assert!(close(s.sigma_d[idx], sd[idx]), "sigma_d {idx}");
            }
        }
    }

    #[test]
    fn sentinel_pixels_are_excluded_and_counted() {
        let mut frames: Vec<FrameRecord> = (0..5)
            .map(|_| frame_of(vec![10, 20], vec![1.0, 2.0]))
            .collect();
        frames[3].distance[1] = f32::NAN;
        let s = temporal_stats(&frames).unwrap();
        assert_eq!(s.excluded_d, 1);
        assert!(s.mean_d[1].is_nan());
        assert!(s.mean_d[0].is_finite());
    }

    #[test]
    fn too_few_frames_rejected() {
        let frames = vec![frame_of(vec![1], vec![1.0])];
        assert!(matches!(
            temporal_stats(&frames),
            Err(AnalysisError::TooFewFrames { .. })
        ));
    }

    #[test]
    fn spearman_detects_monotone_relations() {
        let a: Vec<f64> = (0..100).map(|k| k as f64).collect();
        let b: Vec<f64> = a.iter().map(|x| 1.0 / (x + 1.0)).collect();
        assert!((spearman(&a, &a) - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &b) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_fit_recovers_a_line() {
        let x: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 7.0).collect();
        let (slope, intercept, rms) = linear_fit(&x, &y);
        assert!((slope - 3.0).abs() < 1e-12);
        assert!((intercept + 7.0).abs() < 1e-12);
        assert!(rms < 1e-12);
    }
}

//! Streaming bag loader: reduces one recorded sweep to per-pose,
//! per-sensor statistics without holding the raw frames in memory.

use std::path::Path;

use crate::bag::{BagHeader, BagReader, FrameRecord, RecordBody, StageRecord, TelemetryRecord, ThermalRecord};

use super::stats::{temporal_stats, TemporalStats};
use super::AnalysisError;

pub use super::AnalysisError as SweepError;

/// Reduced statistics of one frame burst at one pose.
#[derive(Debug, Clone)]
pub struct PoseStats {
    pub stats: TemporalStats,
    pub t_first_frame: f64,
}

/// One bag, reduced: stage trajectory, thermal trace, telemetry, and the
/// per-(sensor, position) temporal statistics.
#[derive(Debug, Clone)]
pub struct SweepData {
    pub header: BagHeader,
    pub width: u16,
    pub height: u16,
    pub n_duts: usize,
    pub frames_per_position: usize,
    /// Stage reports in sweep order.
    pub stage: Vec<StageRecord>,
    pub thermal: Vec<(f64, ThermalRecord)>,
    /// Telemetry per sensor, one entry per position.
    pub telemetry: Vec<Vec<TelemetryRecord>>,
    /// Reduced statistics per sensor per position.
    pub poses: Vec<Vec<PoseStats>>,
    /// Earliest frame timestamp in the bag.
    pub first_frame_t: Option<f64>,
}

impl SweepData {
    /// Loads and reduces a bag; frame stacks collapse into statistics as
    /// they stream by.
    pub fn load(path: &Path) -> Result<Self, AnalysisError> {
        let reader = BagReader::open(path)?;
        let header = reader.header.clone();

        // map channel id -> dut index for frame and telemetry channels
        let n_channels = header.channels.len();
        let mut frame_chan_dut: Vec<Option<usize>> = vec![None; n_channels];
        let mut telem_chan_dut: Vec<Option<usize>> = vec![None; n_channels];
        let mut n_duts = 0usize;
        for (i, (name, _)) in header.channels.iter().enumerate() {
            if let Some(rest) = name.strip_prefix("dut") {
                if let Some((idx, kind)) = rest.split_once('/') {
                    if let Ok(d) = idx.parse::<usize>() {
                        n_duts = n_duts.max(d + 1);
                        match kind {
                            "frame" => frame_chan_dut[i] = Some(d),
                            "telemetry" => telem_chan_dut[i] = Some(d),
                            _ => {}
                        }
                    }
                }
            }
        }
        if n_duts == 0 {
            return Err(AnalysisError::Coverage("bag has no sensor channels".into()));
        }

        let mut stage = Vec::new();
        let mut thermal = Vec::new();
        let mut telemetry: Vec<Vec<TelemetryRecord>> = vec![Vec::new(); n_duts];
        let mut pending: Vec<Vec<FrameRecord>> = vec![Vec::new(); n_duts];
        let mut pending_t: Vec<f64> = vec![0.0; n_duts];
        let mut poses: Vec<Vec<PoseStats>> = vec![Vec::new(); n_duts];
        let mut first_frame_t: Option<f64> = None;
        let mut width = 0u16;
        let mut height = 0u16;

        // a stack is closed when the next stage record arrives or the bag ends
        let flush =
            |pending: &mut Vec<Vec<FrameRecord>>, pending_t: &[f64], poses: &mut Vec<Vec<PoseStats>>| -> Result<(), AnalysisError> {
                for d in 0..n_duts {
                    if pending[d].is_empty() {
                        continue;
                    }
                    let stats = temporal_stats(&pending[d])?;
                    poses[d].push(PoseStats {
                        stats,
                        t_first_frame: pending_t[d],
                    });
                    pending[d].clear();
                }
                Ok(())
            };

        for rec in reader.records() {
            let rec = rec?;
            match rec.body {
                RecordBody::Stage(s) => {
                    flush(&mut pending, &pending_t, &mut poses)?;
                    stage.push(s);
                }
                RecordBody::Thermal(t) => thermal.push((rec.t, t)),
                RecordBody::Telemetry(t) => {
                    if let Some(d) = telem_chan_dut[rec.channel as usize] {
                        telemetry[d].push(t);
                    }
                }
                RecordBody::Frame(f) => {
                    if let Some(d) = frame_chan_dut[rec.channel as usize] {
                        width = f.width;
                        height = f.height;
                        if pending[d].is_empty() {
                            pending_t[d] = rec.t;
                        }
                        first_frame_t = Some(match first_frame_t {
                            Some(t0) => t0.min(rec.t),
                            None => rec.t,
                        });
                        pending[d].push(f);
                    }
                }
            }
        }
        flush(&mut pending, &pending_t, &mut poses)?;

        let frames_per_position = poses
            .iter()
            .flat_map(|p| p.iter())
            .map(|p| p.stats.n_frames)
            .next()
            .unwrap_or(0);

        Ok(Self {
            header,
            width,
            height,
            n_duts,
            frames_per_position,
            stage,
            thermal,
            telemetry,
            poses,
            first_frame_t,
        })
    }

    /// Structural completeness: every sensor has one stack per stage
    /// position with a uniform frame count.
    pub fn validate_complete(&self) -> Result<(), AnalysisError> {
        if self.stage.is_empty() {
            return Err(AnalysisError::Coverage("bag contains no stage records".into()));
        }
        for (d, pose_list) in self.poses.iter().enumerate() {
            if pose_list.len() != self.stage.len() {
                return Err(AnalysisError::Coverage(format!(
                    "sensor {d}: {} stacks for {} stage positions",
                    pose_list.len(),
                    self.stage.len()
                )));
            }
            for (p, pose) in pose_list.iter().enumerate() {
                if pose.stats.n_frames != self.frames_per_position {
                    return Err(AnalysisError::Coverage(format!(
                        "sensor {d} position {p}: {} frames, expected {}",
                        pose.stats.n_frames, self.frames_per_position
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

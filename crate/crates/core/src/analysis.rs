//! Degradation metrics computed from recorded bags.

pub mod calib;
pub mod dead;
pub mod distance;
pub mod profile;
pub mod report;
pub mod stats;
pub mod sweep;
pub mod trend;

pub use calib::{delta_k, recalibrate, Calibration, DeltaK};
pub use dead::dead_pixels;
pub use distance::{distance_accuracy, DistanceAccuracy};
pub use profile::{beam_profile, intensity_profile, BeamEstimate, IntensityProfile};
pub use report::{analyze_bag, write_report_files, MetricsReport};
pub use stats::{temporal_stats, TemporalStats};
pub use sweep::{SweepData, SweepError};
pub use trend::{trend, TrendSummary};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("bag error: {0}")]
    Bag(#[from] crate::bag::BagError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("sweep coverage error: {0}")]
    Coverage(String),
    #[error("need at least {need} frames, got {got}")]
    TooFewFrames { need: usize, got: usize },
    #[error("calibration insufficient: {got} correspondences, need {need}")]
    CalibrationInsufficient { got: usize, need: usize },
    #[error("trend alignment error: {0}")]
    Alignment(String),
}

//! Pose estimation against a prebuilt map: point-to-point ICP, a
//! constant-velocity predictor, and the per-scan localizer update.

mod icp;
mod localizer;
mod motion;
pub mod scans;

pub use icp::{icp_align, kabsch, IcpConfig, IcpResult};
pub use localizer::{initialize, localizer_update, Localizer, LocalizerConfig, PoseEstimate, YawSearch};
pub use motion::{finite_difference, predict, MotionState};
pub use scans::{decode_scans, encode_scans, load_scans, save_scans, StampedScan};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum LocalizationError {
    #[error("no correspondences within the gate at the initial guess")]
    NoCorrespondences,
    #[error("scan is empty")]
    EmptyScan,
    #[error("map is empty")]
    EmptyMap,
    #[error("initialization failed: {0}")]
    InitializationFailed(String),
}

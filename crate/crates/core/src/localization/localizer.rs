use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::icp::{icp_align, IcpConfig};
use super::motion::{finite_difference, predict, MotionState};
use super::LocalizationError;
use crate::frames::{RigidTransform, Timestamp};
use crate::pointcloud::{voxel_downsample, PointCloud, PointCloudMap};

/// Localizer output for one scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub stamp: Timestamp,
    pub map_to_vehicle: RigidTransform,
    /// Mean squared correspondence distance, m². `f64::MAX` when no
    /// correspondence was found.
    pub fitness: f64,
    pub iterations_used: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizerConfig {
    pub icp: IcpConfig,
    /// Scan pre-downsampling voxel, meters. Zero disables.
    pub scan_voxel: f64,
    /// Weight of the newest finite-difference velocity in the smoothed estimate.
    pub velocity_smoothing: f64,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        LocalizerConfig { icp: IcpConfig::default(), scan_voxel: 0.3, velocity_smoothing: 0.5 }
    }
}

/// Coarse yaw sweep around an initial pose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct YawSearch {
    pub span: f64,
    pub step: f64,
}

fn blend(a: [f64; 3], b: [f64; 3], wb: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| (1.0 - wb) * a[i] + wb * b[i])
}

/// Advances the localizer by one scan.
///
/// The guess is the constant-velocity prediction (or `prior_delta` applied to
/// the previous pose when odometry is available). A converged registration
/// replaces the pose and updates the smoothed velocity; otherwise the
/// prediction is held and the estimate is flagged.
pub fn localizer_update(
    state: &MotionState,
    scan: &PointCloud,
    stamp: Timestamp,
    map: &PointCloudMap,
    cfg: &LocalizerConfig,
    prior_delta: Option<&RigidTransform>,
) -> (MotionState, PoseEstimate) {
    let guess = match prior_delta {
        Some(delta) => state.pose.compose(delta),
        None => predict(state, stamp),
    };
    let reduced;
    let scan = if cfg.scan_voxel > 0.0 {
        reduced = voxel_downsample(scan, cfg.scan_voxel);
        &reduced
    } else {
        scan
    };
    let result = icp_align(scan, map.index(), &guess, &cfg.icp);
    match result {
        Ok(r) if r.converged => {
            let dt = stamp.seconds_since(state.stamp);
            let (v, w) = if dt > 0.0 {
                let (v_raw, w_raw) = finite_difference(&state.pose, &r.transform, dt);
                (blend(state.linear_velocity, v_raw, cfg.velocity_smoothing), blend(state.angular_velocity, w_raw, cfg.velocity_smoothing))
            } else {
                (state.linear_velocity, state.angular_velocity)
            };
            let next = MotionState { pose: r.transform, linear_velocity: v, angular_velocity: w, stamp };
            let est = PoseEstimate {
                stamp,
                map_to_vehicle: r.transform,
                fitness: r.fitness,
                iterations_used: r.iterations,
                converged: true,
            };
            (next, est)
        }
        other => {
            let (fitness, iterations) = match other {
                Ok(r) => (r.fitness, r.iterations),
                Err(_) => (f64::MAX, 0),
            };
            let next = MotionState { pose: guess, stamp, ..*state };
            let est = PoseEstimate { stamp, map_to_vehicle: guess, fitness, iterations_used: iterations, converged: false };
            (next, est)
        }
    }
}

/// Verifies (and optionally searches yaw around) a starting pose against the
/// first scan. Candidates are evaluated in ascending offset order; the
/// converged candidate with the lowest fitness wins.
pub fn initialize(
    pose: &RigidTransform,
    yaw_search: Option<YawSearch>,
    scan: &PointCloud,
    stamp: Timestamp,
    map: &PointCloudMap,
    cfg: &LocalizerConfig,
) -> Result<MotionState, LocalizationError> {
    let Some(bounds) = map.cloud().bounds() else {
        return Err(LocalizationError::InitializationFailed("map is empty".into()));
    };
    let t = pose.translation();
    if !bounds.contains_xy(t.x, t.y, 0.0) {
        return Err(LocalizationError::InitializationFailed(format!(
            "initial pose ({:.2}, {:.2}) lies outside the map bounds",
            t.x, t.y
        )));
    }
    let offsets: Vec<f64> = match yaw_search {
        Some(s) if s.step > 0.0 && s.span > 0.0 => {
            let n = (s.span / s.step).floor() as i64;
            (-n..=n).map(|k| k as f64 * s.step).collect()
        }
        _ => vec![0.0],
    };
    let scan = if cfg.scan_voxel > 0.0 { voxel_downsample(scan, cfg.scan_voxel) } else { scan.clone() };
    let mut best: Option<(f64, RigidTransform)> = None;
    for off in offsets {
        let rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), off) * pose.rotation();
        let guess = RigidTransform::new(rot, *pose.translation());
        match icp_align(&scan, map.index(), &guess, &cfg.icp) {
            Ok(r) if r.converged => {
                if best.map_or(true, |(f, _)| r.fitness < f) {
                    best = Some((r.fitness, r.transform));
                }
            }
            _ => {}
        }
    }
    match best {
        Some((_, pose)) => Ok(MotionState::at_rest(pose, stamp)),
        None => Err(LocalizationError::InitializationFailed("no candidate pose converged".into())),
    }
}

/// Stateful wrapper that owns the motion state between scans.
#[derive(Clone, Debug)]
pub struct Localizer {
    state: MotionState,
    cfg: LocalizerConfig,
}

impl Localizer {
    pub fn new(state: MotionState, cfg: LocalizerConfig) -> Self {
        Localizer { state, cfg }
    }

    pub fn state(&self) -> &MotionState {
        &self.state
    }

    pub fn config(&self) -> &LocalizerConfig {
        &self.cfg
    }

    pub fn update(&mut self, scan: &PointCloud, stamp: Timestamp, map: &PointCloudMap) -> PoseEstimate {
        let (next, est) = localizer_update(&self.state, scan, stamp, map, &self.cfg, None);
        self.state = next;
        est
    }

    pub fn update_with_prior(&mut self, scan: &PointCloud, stamp: Timestamp, map: &PointCloudMap, prior_delta: &RigidTransform) -> PoseEstimate {
        let (next, est) = localizer_update(&self.state, scan, stamp, map, &self.cfg, Some(prior_delta));
        self.state = next;
        est
    }

    pub fn predict(&self, at: Timestamp) -> RigidTransform {
        predict(&self.state, at)
    }
}

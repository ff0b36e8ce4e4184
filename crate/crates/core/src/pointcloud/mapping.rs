//! Odometry-seeded incremental scan-to-map registration.
//!
//! Each scan is aligned against the points of all previous keyframes; scans
//! that moved far enough from the last keyframe are admitted into the map.
//! Registration runs against the full-resolution keyframe points, while the
//! published map is their voxel-centroid reduction.
//!
//! Point-to-point matching is biased at the edge of what has been mapped so
//! far: scan points that reach past it snap onto the frontier and drag the
//! pose backwards. Each keyframe therefore records the ball its scan covered,
//! and only scan points well inside some keyframe's ball take part in
//! registration.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{transform_cloud, PointCloud, PointCloudMap, SpatialIndex, VoxelGrid};
use crate::frames::{RigidTransform, MAP_FRAME};
use crate::localization::{icp_align, IcpConfig, StampedScan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapBuildConfig {
    pub voxel_size: f64,
    pub keyframe_distance: f64,
    pub keyframe_angle: f64,
    /// Scan points closer than this to the edge of the mapped region are
    /// left out of registration, meters.
    pub coverage_margin: f64,
    pub icp: IcpConfig,
}

impl Default for MapBuildConfig {
    fn default() -> Self {
        MapBuildConfig {
            voxel_size: 0.2,
            keyframe_distance: 1.0,
            keyframe_angle: 0.17,
            coverage_margin: 2.0,
            icp: IcpConfig::default(),
        }
    }
}

impl MapBuildConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("voxel_size", self.voxel_size),
            ("keyframe_distance", self.keyframe_distance),
            ("keyframe_angle", self.keyframe_angle),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive"));
            }
        }
        if !(self.coverage_margin >= 0.0 && self.coverage_margin.is_finite()) {
            return Err("coverage_margin must be non-negative".into());
        }
        self.icp.validate()
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum MapBuildError {
    #[error("no scans supplied")]
    NoScans,
    #[error("scan {index} is empty")]
    EmptyScan { index: usize },
    #[error("registration diverged at scan {index} (fitness {fitness:.4} m²)")]
    RegistrationDiverged { index: usize, fitness: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Output of [`build_map`].
#[derive(Clone, Debug)]
pub struct BuiltMap {
    pub map: PointCloudMap,
    /// Estimated map→vehicle pose of every input scan.
    pub poses: Vec<RigidTransform>,
    /// Indices into `poses` of the scans admitted as keyframes.
    pub keyframes: Vec<usize>,
}

impl BuiltMap {
    pub fn keyframe_poses(&self) -> Vec<RigidTransform> {
        self.keyframes.iter().map(|&i| self.poses[i]).collect()
    }
}

/// `scans[k] = (scan in vehicle frame, odometry delta from scan k-1 to k)`.
/// The first scan fixes the map origin; its prior is ignored.
pub fn build_map(scans: &[(PointCloud, RigidTransform)], cfg: &MapBuildConfig) -> Result<BuiltMap, MapBuildError> {
    let clouds: Vec<&PointCloud> = scans.iter().map(|s| &s.0).collect();
    register(&clouds, cfg, |k, _| scans[k].1)
}

/// Builds a map from stamped scans alone, predicting each pose by carrying
/// the previous registered motion forward at constant velocity.
pub fn build_map_from_scans(scans: &[StampedScan], cfg: &MapBuildConfig) -> Result<BuiltMap, MapBuildError> {
    let clouds: Vec<&PointCloud> = scans.iter().map(|s| &s.cloud).collect();
    register(&clouds, cfg, |k, poses| {
        if k < 2 {
            return RigidTransform::identity();
        }
        let last = poses[k - 2].inverse().compose(&poses[k - 1]);
        let (prev, cur) = (scans[k - 1].stamp.seconds_since(scans[k - 2].stamp), scans[k].stamp.seconds_since(scans[k - 1].stamp));
        if prev > 0.0 {
            RigidTransform::interpolate(&RigidTransform::identity(), &last, cur / prev)
        } else {
            RigidTransform::identity()
        }
    })
}

fn register(
    scans: &[&PointCloud],
    cfg: &MapBuildConfig,
    prior: impl Fn(usize, &[RigidTransform]) -> RigidTransform,
) -> Result<BuiltMap, MapBuildError> {
    cfg.validate().map_err(MapBuildError::InvalidConfig)?;
    let Some(first) = scans.first() else {
        return Err(MapBuildError::NoScans);
    };
    if first.is_empty() {
        return Err(MapBuildError::EmptyScan { index: 0 });
    }

    let mut grid = VoxelGrid::new(cfg.voxel_size);
    grid.extend(&first.points);
    let mut target: Vec<[f64; 3]> = first.points.iter().map(|p| p.xyz()).collect();
    let mut index = SpatialIndex::from_xyz(target.clone());
    let mut poses = vec![RigidTransform::identity()];
    let mut keyframes = vec![0usize];
    let mut last_key = RigidTransform::identity();
    let mut coverage = vec![Coverage::of(first, &RigidTransform::identity(), cfg.coverage_margin)];

    for (k, scan) in scans.iter().enumerate().skip(1) {
        if scan.is_empty() {
            return Err(MapBuildError::EmptyScan { index: k });
        }
        let guess = poses[k - 1].compose(&prior(k, &poses));
        let inside = covered(scan, &guess, &coverage);
        let used = if inside.len() >= MIN_COVERED_POINTS { &inside } else { *scan };
        let result = icp_align(used, &index, &guess, &cfg.icp)
            .map_err(|_| MapBuildError::RegistrationDiverged { index: k, fitness: f64::MAX })?;
        let inlier_fraction = result.inliers as f64 / used.len() as f64;
        if result.fitness > cfg.icp.fitness_threshold || inlier_fraction < cfg.icp.min_inlier_fraction {
            return Err(MapBuildError::RegistrationDiverged { index: k, fitness: result.fitness });
        }
        let pose = result.transform;
        poses.push(pose);

        let moved = pose.translation_distance(&last_key) >= cfg.keyframe_distance
            || pose.rotation_distance(&last_key) >= cfg.keyframe_angle;
        if moved {
            let in_map = transform_cloud(scan, &pose);
            grid.extend(&in_map.points);
            target.extend(in_map.points.iter().map(|p| p.xyz()));
            index = SpatialIndex::from_xyz(target.clone());
            keyframes.push(k);
            coverage.push(Coverage::of(scan, &pose, cfg.coverage_margin));
            last_key = pose;
        }
    }

    let cloud = PointCloud { points: grid.centroids(), frame: MAP_FRAME.to_string() };
    Ok(BuiltMap { map: PointCloudMap::new(cloud), poses, keyframes })
}

/// Below this many covered points the whole scan is registered instead.
const MIN_COVERED_POINTS: usize = 50;

/// The ball a keyframe's scan reached, shrunk by the margin.
struct Coverage {
    center: Vector3<f64>,
    radius_sq: f64,
}

impl Coverage {
    fn of(scan: &PointCloud, pose: &RigidTransform, margin: f64) -> Coverage {
        let reach = scan.points.iter().map(|p| p.coords().norm()).fold(0.0, f64::max);
        let r = (reach - margin).max(0.0);
        Coverage { center: *pose.translation(), radius_sq: r * r }
    }
}

/// The part of `scan` that lands inside the mapped region when placed at `pose`.
fn covered(scan: &PointCloud, pose: &RigidTransform, coverage: &[Coverage]) -> PointCloud {
    let points = scan
        .points
        .iter()
        .filter(|p| {
            let q = pose.transform_point(&p.coords());
            // newest keyframes first: they are the likeliest to contain the point
            coverage.iter().rev().any(|c| (q - c.center).norm_squared() <= c.radius_sq)
        })
        .copied()
        .collect();
    PointCloud { points, frame: scan.frame.clone() }
}

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trajectory::Trajectory;
use crate::frames::{RigidTransform, Timestamp, NANOS_PER_SEC, VEHICLE_FRAME};
use crate::localization::StampedScan;
use crate::pointcloud::{Point, PointCloud, PointCloudMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorMode {
    /// Random subset of map points in range.
    MapSample,
    /// Sphere-traced rays against the map's point surface.
    Raycast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorModel {
    pub mode: SensorMode,
    pub max_range: f64,
    pub points_per_scan: usize,
    pub noise_sigma: f64,
    pub rate_hz: f64,
    /// Sensor origin above the vehicle origin, meters.
    pub mount_height: f64,
    /// Raycast: a ray hits once it passes this close to a map point.
    pub surface_radius: f64,
    pub seed: u64,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel {
            mode: SensorMode::MapSample,
            max_range: 50.0,
            points_per_scan: 2000,
            noise_sigma: 0.02,
            rate_hz: 10.0,
            mount_height: 1.8,
            surface_radius: 0.15,
            seed: 1,
        }
    }
}

impl SensorModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.max_range > 0.0 && self.rate_hz > 0.0 && self.points_per_scan > 0) {
            return Err("sensor range, rate and point count must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err("noise_sigma must be non-negative".into());
        }
        Ok(())
    }

    fn rng_for(&self, k: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ k)
    }

    /// One scan from `pose`, in the vehicle frame. `k` selects the noise stream.
    pub fn scan(&self, map: &PointCloudMap, pose: &RigidTransform, k: u64) -> PointCloud {
        let mut rng = self.rng_for(k);
        let sensor = pose.transform_point(&Vector3::new(0.0, 0.0, self.mount_height));
        let hits: Vec<[f64; 3]> = match self.mode {
            SensorMode::MapSample => {
                let mut near = map.index().radius_search(&[sensor.x, sensor.y, sensor.z], self.max_range);
                near.sort_by_key(|n| n.index);
                let cloud = &map.cloud().points;
                if near.len() <= self.points_per_scan {
                    near.iter().map(|n| cloud[n.index].xyz()).collect()
                } else {
                    let mut picked = sample(&mut rng, near.len(), self.points_per_scan).into_vec();
                    picked.sort_unstable();
                    picked.into_iter().map(|i| cloud[near[i].index].xyz()).collect()
                }
            }
            SensorMode::Raycast => raycast(map, &sensor, pose, self),
        };
        let inv = pose.inverse();
        let noise = (self.noise_sigma > 0.0).then(|| Normal::new(0.0, self.noise_sigma).unwrap());
        let points = hits
            .into_iter()
            .map(|h| {
                let mut p = inv.transform_point(&Vector3::from(h));
                if let Some(n) = &noise {
                    p += Vector3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
                }
                Point::from_vector(&p)
            })
            .collect();
        PointCloud::from_points(VEHICLE_FRAME, points)
    }
}

const RING_ELEVATIONS: usize = 16;

fn raycast(map: &PointCloudMap, sensor: &Vector3<f64>, pose: &RigidTransform, model: &SensorModel) -> Vec<[f64; 3]> {
    let azimuths = model.points_per_scan.div_ceil(RING_ELEVATIONS);
    let mut hits = Vec::new();
    for e in 0..RING_ELEVATIONS {
        let elev = (-15.0 + 30.0 * e as f64 / (RING_ELEVATIONS - 1) as f64).to_radians();
        for a in 0..azimuths {
            if hits.len() >= model.points_per_scan {
                break;
            }
            let az = 2.0 * std::f64::consts::PI * a as f64 / azimuths as f64;
            let dir = pose.transform_vector(&Vector3::new(elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin()));
            let mut t = 0.0;
            while t < model.max_range {
                let p = sensor + dir * t;
                let Some(n) = map.index().nearest(&[p.x, p.y, p.z]) else { break };
                if n.distance < model.surface_radius {
                    hits.push([p.x, p.y, p.z]);
                    break;
                }
                t += (n.distance - 0.5 * model.surface_radius).max(0.05);
            }
        }
    }
    hits
}

/// Scans along the trajectory at `model.rate_hz`, starting at its first stamp.
pub fn synthesize_scans(map: &PointCloudMap, trajectory: &Trajectory, model: &SensorModel) -> Vec<StampedScan> {
    let (Some(start), Some(end)) = (trajectory.start(), trajectory.end()) else {
        return Vec::new();
    };
    let period = (NANOS_PER_SEC as f64 / model.rate_hz).round() as u64;
    let count = (end.0 - start.0) / period + 1;
    // per-scan seeds keep the output independent of scheduling
    (0..count)
        .into_par_iter()
        .map(|k| {
            let stamp = Timestamp(start.0 + k * period);
            let pose = trajectory.pose_at(stamp).unwrap();
            StampedScan { stamp, cloud: model.scan(map, &pose, k) }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_map() -> PointCloudMap {
        let pts = (0..40).flat_map(|i| (0..40).map(move |j| Point::new(i as f64 - 20.0, j as f64 - 20.0, 0.0))).collect();
        PointCloudMap::new(PointCloud::from_points("map", pts))
    }

    #[test]
    fn noiseless_sample_is_exact_inverse() {
        let map = grid_map();
        let pose = RigidTransform::from_xyz_yaw(1.0, 2.0, 0.0, 0.3);
        let model = SensorModel { noise_sigma: 0.0, max_range: 8.0, points_per_scan: 100_000, ..Default::default() };
        let scan = model.scan(&map, &pose, 0);
        let sensor = Vector3::new(1.0, 2.0, 1.8);
        let expected: Vec<_> = map.cloud().points.iter().filter(|p| (p.coords() - sensor).norm() <= 8.0).collect();
        assert_eq!(scan.len(), expected.len());
        for (s, m) in scan.points.iter().zip(expected) {
            assert!((pose.transform_point(&s.coords()) - m.coords()).norm() < 1e-12);
        }
    }

    #[test]
    fn doubling_rate_doubles_count() {
        let map = grid_map();
        let traj = Trajectory::new((0..100).map(|k| (Timestamp::from_millis(k * 20), RigidTransform::from_translation(k as f64 * 0.1, 0.0, 0.0))).collect());
        let a = SensorModel { points_per_scan: 50, rate_hz: 10.0, ..Default::default() };
        let b = SensorModel { rate_hz: 20.0, ..a.clone() };
        let na = synthesize_scans(&map, &traj, &a).len();
        let nb = synthesize_scans(&map, &traj, &b).len();
        assert_eq!(na, 20);
        assert_eq!(nb, 2 * na);
    }

    #[test]
    fn raycast_hits_ground() {
        let pts = (0..150).flat_map(|i| (0..150).map(move |j| Point::new(i as f64 * 0.2 - 15.0, j as f64 * 0.2 - 15.0, 0.0))).collect();
        let map = PointCloudMap::new(PointCloud::from_points("map", pts));
        let model = SensorModel { mode: SensorMode::Raycast, noise_sigma: 0.0, points_per_scan: 256, max_range: 15.0, ..Default::default() };
        let scan = model.scan(&map, &RigidTransform::identity(), 0);
        assert!(!scan.is_empty());
        // sensor 1.8 m up; every hit lies within the surface radius of the plane
        assert!(scan.points.iter().all(|p| p.z.abs() < 0.15), "{:?}", scan.points.iter().map(|p| p.z).fold(0.0f64, f64::max));
    }
}

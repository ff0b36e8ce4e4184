//! Unplanned events: vehicle pauses, scan dropouts and clutter.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::trajectory::Trajectory;
use crate::frames::Timestamp;
use crate::localization::StampedScan;
use crate::pointcloud::Point;

/// Times are seconds from the start of the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Disturbance {
    /// The vehicle stands still for `duration`; everything after shifts later.
    Pause { start: f64, duration: f64 },
    /// Scans with stamps in `[start, end)` are lost.
    ScanDropout { start: f64, end: f64 },
    /// `points` uniform random points in a sphere of `radius` around
    /// `center` (vehicle frame) are added to every scan in `[start, end)`.
    Clutter { start: f64, end: f64, center: [f64; 3], radius: f64, points: usize, seed: u64 },
}

impl Disturbance {
    pub fn validate(&self) -> Result<(), String> {
        let ok = match self {
            Disturbance::Pause { start, duration } => *start >= 0.0 && *duration > 0.0,
            Disturbance::ScanDropout { start, end } => *start >= 0.0 && end > start,
            Disturbance::Clutter { start, end, radius, .. } => *start >= 0.0 && end > start && *radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("disturbance out of bounds: {self:?}"))
        }
    }
}

/// Applies pauses to a trajectory, in list order.
pub fn inject_trajectory(traj: &Trajectory, disturbances: &[Disturbance]) -> Trajectory {
    disturbances.iter().fold(traj.clone(), |t, d| match d {
        Disturbance::Pause { start, duration } => t.with_pause(*start, *duration),
        _ => t,
    })
}

fn in_window(stamp: Timestamp, origin: Timestamp, start: f64, end: f64) -> bool {
    let t = stamp.seconds_since(origin);
    t >= start && t < end
}

/// Applies dropouts and clutter to a scan stream; pauses are ignored here
/// (they act on the trajectory the scans are synthesized from).
pub fn inject_scans(scans: &[StampedScan], disturbances: &[Disturbance]) -> Vec<StampedScan> {
    let Some(origin) = scans.first().map(|s| s.stamp) else {
        return Vec::new();
    };
    let mut out: Vec<StampedScan> = scans
        .iter()
        .filter(|s| {
            !disturbances.iter().any(|d| matches!(d, Disturbance::ScanDropout { start, end } if in_window(s.stamp, origin, *start, *end)))
        })
        .cloned()
        .collect();
    for d in disturbances {
        if let Disturbance::Clutter { start, end, center, radius, points, seed } = d {
            for (k, scan) in out.iter_mut().enumerate() {
                if !in_window(scan.stamp, origin, *start, *end) {
                    continue;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
                let c = Vector3::from(*center);
                let mut added = 0;
                while added < *points {
                    let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    if v.norm_squared() <= 1.0 {
                        scan.cloud.points.push(Point::from_vector(&(c + v * *radius)));
                        added += 1;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::RigidTransform;
    use crate::pointcloud::PointCloud;

    fn stream() -> Vec<StampedScan> {
        (0..20)
            .map(|k| StampedScan {
                stamp: Timestamp::from_millis(k * 100),
                cloud: PointCloud::from_points("vehicle", vec![Point::new(k as f64, 0.0, 0.0)]),
            })
            .collect()
    }

    #[test]
    fn empty_list_is_identity() {
        let s = stream();
        assert_eq!(inject_scans(&s, &[]), s);
        let t = Trajectory::new(vec![(Timestamp(0), RigidTransform::identity()), (Timestamp(10), RigidTransform::identity())]);
        assert_eq!(inject_trajectory(&t, &[]), t);
    }

    #[test]
    fn dropout_removes_window() {
        let out = inject_scans(&stream(), &[Disturbance::ScanDropout { start: 0.5, end: 1.0 }]);
        assert_eq!(out.len(), 15);
        assert!(out.iter().all(|s| !(500..1000).contains(&(s.stamp.0 / 1_000_000))));
    }

    #[test]
    fn clutter_stays_in_sphere() {
        let d = Disturbance::Clutter { start: 0.0, end: 0.35, center: [0.0, 0.0, 1.8], radius: 2.0, points: 500, seed: 3 };
        let out = inject_scans(&stream(), &[d]);
        assert_eq!(out[0].cloud.len(), 501);
        assert_eq!(out[3].cloud.len(), 501);
        assert_eq!(out[4].cloud.len(), 1);
        let c = Vector3::new(0.0, 0.0, 1.8);
        assert!(out[0].cloud.points[1..].iter().all(|p| (p.coords() - c).norm() <= 2.0));
    }
}

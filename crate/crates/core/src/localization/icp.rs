use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::LocalizationError;
use crate::frames::RigidTransform;
use crate::pointcloud::{PointCloud, SpatialIndex};

/// Point-to-point ICP parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Correspondence gate, meters.
    pub max_correspondence_distance: f64,
    pub convergence_translation: f64,
    pub convergence_rotation: f64,
    /// Mean squared correspondence distance (m²) above which a result is
    /// never reported as converged.
    pub fitness_threshold: f64,
    /// Minimum share of scan points with a correspondence at the final pose.
    pub min_inlier_fraction: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iterations: 30,
            max_correspondence_distance: 1.0,
            convergence_translation: 1e-4,
            convergence_rotation: 1e-4,
            fitness_threshold: 0.25,
            min_inlier_fraction: 0.3,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("max_correspondence_distance", self.max_correspondence_distance),
            ("convergence_translation", self.convergence_translation),
            ("convergence_rotation", self.convergence_rotation),
            ("fitness_threshold", self.fitness_threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.max_iterations == 0 {
            return Err("max_iterations must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.min_inlier_fraction) {
            return Err("min_inlier_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcpResult {
    /// Maps scan coordinates into map coordinates.
    pub transform: RigidTransform,
    /// Mean squared distance over the final inlier correspondences, m².
    pub fitness: f64,
    pub iterations: usize,
    pub converged: bool,
    pub inliers: usize,
    /// Fitness measured at the start of each iteration (before its update).
    pub fitness_history: Vec<f64>,
}

struct Correspondences {
    src: Vec<Vector3<f64>>,
    dst: Vec<Vector3<f64>>,
    sum_sq: f64,
}

fn correspond(scan: &[Vector3<f64>], map: &SpatialIndex, t: &RigidTransform, gate: f64) -> Correspondences {
    let pairs: Vec<Option<(Vector3<f64>, [f64; 3], f64)>> = scan
        .par_iter()
        .with_min_len(256)
        .map(|p| {
            let q = t.transform_point(p);
            map.nearest_point_within(&[q.x, q.y, q.z], gate).map(|(n, m)| (*p, m, n.distance_squared))
        })
        .collect();
    let mut out = Correspondences { src: Vec::with_capacity(pairs.len()), dst: Vec::with_capacity(pairs.len()), sum_sq: 0.0 };
    for (p, m, d2) in pairs.into_iter().flatten() {
        out.src.push(p);
        out.dst.push(Vector3::new(m[0], m[1], m[2]));
        out.sum_sq += d2;
    }
    out
}

/// Least-squares rigid transform taking `src` onto `dst` (Kabsch / SVD).
pub fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<RigidTransform> {
    let n = src.len();
    if n < 3 || dst.len() != n {
        return None;
    }
    let inv_n = 1.0 / n as f64;
    let cs = src.iter().fold(Vector3::zeros(), |a, p| a + p) * inv_n;
    let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + p) * inv_n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut v = v_t.transpose();
    let mut r = v * u.transpose();
    if r.determinant() < 0.0 {
        v.column_mut(2).neg_mut();
        r = v * u.transpose();
    }
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let t = cd - rot * cs;
    Some(RigidTransform::new(rot, t))
}

/// Aligns `scan` (in its own frame) to the indexed map starting from `guess`.
///
/// Fails with [`LocalizationError::NoCorrespondences`] only when the initial
/// guess has fewer than three correspondences inside the gate; a later loss of
/// correspondences ends the iteration with `converged = false`.
pub fn icp_align(
    scan: &PointCloud,
    map: &SpatialIndex,
    guess: &RigidTransform,
    cfg: &IcpConfig,
) -> Result<IcpResult, LocalizationError> {
    if scan.is_empty() {
        return Err(LocalizationError::EmptyScan);
    }
    if map.is_empty() {
        return Err(LocalizationError::EmptyMap);
    }
    let src: Vec<Vector3<f64>> = scan.points.iter().map(|p| p.coords()).collect();
    let gate = cfg.max_correspondence_distance;
    let mut t = *guess;
    let mut history = Vec::new();
    let mut settled = false;
    let mut iterations = 0;

    for iter in 0..cfg.max_iterations {
        let c = correspond(&src, map, &t, gate);
        if c.src.len() < 3 {
            if iter == 0 {
                return Err(LocalizationError::NoCorrespondences);
            }
            break;
        }
        history.push(c.sum_sq / c.src.len() as f64);
        iterations = iter + 1;
        let Some(next) = kabsch(&c.src, &c.dst) else { break };
        let step = next.compose(&t.inverse());
        t = next;
        if step.translation().norm() < cfg.convergence_translation
            && step.rotation_distance(&RigidTransform::identity()) < cfg.convergence_rotation
        {
            settled = true;
            break;
        }
    }

    let fin = correspond(&src, map, &t, gate);
    let inliers = fin.src.len();
    let fitness = if inliers == 0 { f64::MAX } else { fin.sum_sq / inliers as f64 };
    let inlier_fraction = inliers as f64 / src.len() as f64;
    let converged = settled && fitness <= cfg.fitness_threshold && inlier_fraction >= cfg.min_inlier_fraction;
    Ok(IcpResult { transform: t, fitness, iterations, converged, inliers, fitness_history: history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::Point;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Three orthogonal planes plus scattered boxes: fully constrained.
    fn scene(seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        for _ in 0..3000 {
            pts.push(Point::new(rng.gen_range(-15.0..15.0), rng.gen_range(-15.0..15.0), 0.0));
            pts.push(Point::new(rng.gen_range(-15.0..15.0), 8.0, rng.gen_range(0.0..4.0)));
            pts.push(Point::new(-9.0, rng.gen_range(-15.0..15.0), rng.gen_range(0.0..4.0)));
        }
        for k in 0..6 {
            let (cx, cy) = (-6.0 + 3.0 * k as f64, -4.0 + (k % 3) as f64 * 3.0);
            for _ in 0..300 {
                pts.push(Point::new(cx + rng.gen_range(-0.4..0.4), cy + rng.gen_range(-0.4..0.4), rng.gen_range(0.0..2.0)));
            }
        }
        PointCloud::from_points("map", pts)
    }

    fn sample(map: &PointCloud, n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::from_points("scan", (0..n).map(|_| map.points[rng.gen_range(0..map.len())]).collect())
    }

    #[test]
    fn kabsch_recovers_exact_transform() {
        let t = RigidTransform::from_scaled_axis(Vector3::new(0.1, -0.3, 0.8), Vector3::new(1.0, 2.0, -0.5));
        let src: Vec<_> = (0..20).map(|i| Vector3::new(i as f64, (i * i % 7) as f64, (i % 3) as f64)).collect();
        let dst: Vec<_> = src.iter().map(|p| t.transform_point(p)).collect();
        assert!(kabsch(&src, &dst).unwrap().approx_eq(&t, 1e-10));
        assert!(kabsch(&src[..2], &dst[..2]).is_none());
    }

    #[test]
    fn identity_guess_on_map_sample() {
        let map = scene(1);
        let index = SpatialIndex::build(&map);
        let scan = sample(&map, 1500, 2);
        let r = icp_align(&scan, &index, &RigidTransform::identity(), &IcpConfig::default()).unwrap();
        assert!(r.converged);
        assert!(r.transform.approx_eq(&RigidTransform::identity(), 1e-9));
        assert!(r.fitness < 1e-20);
    }

    #[test]
    fn recovers_yaw_and_translation_offset() {
        let map = scene(1);
        let index = SpatialIndex::build(&map);
        let perturb = RigidTransform::from_xyz_yaw(0.3, 0.2, 0.0, 5f64.to_radians());
        let scan = sample(&map, 1500, 4).transformed(&perturb);
        let r = icp_align(&scan, &index, &RigidTransform::identity(), &IcpConfig::default()).unwrap();
        let truth = perturb.inverse();
        assert!(r.converged, "{r:?}");
        assert!(r.transform.translation_distance(&truth) < 1e-3);
        assert!(r.transform.rotation_distance(&truth) < 1e-3);
    }

    #[test]
    fn far_guess_never_silently_wrong() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sparse: Vec<Point> =
            (0..200).map(|_| Point::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(0.0..2.0))).collect();
        let map = PointCloud::from_points("map", sparse);
        let index = SpatialIndex::build(&map);
        let scan = sample(&map, 100, 10);
        let guess = RigidTransform::from_translation(50.0, 0.0, 0.0);
        match icp_align(&scan, &index, &guess, &IcpConfig::default()) {
            Err(LocalizationError::NoCorrespondences) => {}
            Ok(r) => assert!(!r.converged || r.transform.translation().norm() < 0.1),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn fitness_history_non_increasing() {
        let map = scene(5);
        let index = SpatialIndex::build(&map);
        let perturb = RigidTransform::from_xyz_yaw(0.2, -0.1, 0.05, 0.03);
        let scan = sample(&map, 1000, 6).transformed(&perturb);
        let cfg = IcpConfig { max_correspondence_distance: 5.0, ..Default::default() };
        let r = icp_align(&scan, &index, &RigidTransform::identity(), &cfg).unwrap();
        for w in r.fitness_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "{:?}", r.fitness_history);
        }
    }

    #[test]
    fn unconverged_whenever_fitness_above_threshold() {
        let map = scene(7);
        let index = SpatialIndex::build(&map);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // heavy noise: residuals exceed the threshold
        let noisy = PointCloud::from_points(
            "scan",
            sample(&map, 500, 9)
                .points
                .iter()
                .map(|p| Point::new(p.x + rng.gen_range(-0.9..0.9), p.y + rng.gen_range(-0.9..0.9), p.z + rng.gen_range(-0.9..0.9)))
                .collect(),
        );
        let cfg = IcpConfig { fitness_threshold: 0.01, ..Default::default() };
        let r = icp_align(&noisy, &index, &RigidTransform::identity(), &cfg).unwrap();
        assert!(r.fitness > cfg.fitness_threshold);
        assert!(!r.converged);
    }

    #[test]
    fn empty_inputs() {
        let index = SpatialIndex::build(&scene(1));
        let empty = PointCloud::new("scan");
        assert!(matches!(icp_align(&empty, &index, &RigidTransform::identity(), &IcpConfig::default()), Err(LocalizationError::EmptyScan)));
    }
}

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::frames::RigidTransform;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity: Option<f32>,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point { x, y, z, intensity: None }
    }

    pub fn with_intensity(x: f64, y: f64, z: f64, intensity: f32) -> Self {
        Point { x, y, z, intensity: Some(intensity) }
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Point::new(v.x, v.y, v.z)
    }

    pub fn coords(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance_squared(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub frame: String,
}

/// Axis-aligned bounds of a cloud.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn contains_xy(&self, x: f64, y: f64, margin: f64) -> bool {
        x >= self.min[0] - margin && x <= self.max[0] + margin && y >= self.min[1] - margin && y <= self.max[1] + margin
    }
}

impl PointCloud {
    pub fn new(frame: impl Into<String>) -> Self {
        PointCloud { points: Vec::new(), frame: frame.into() }
    }

    pub fn from_points(frame: impl Into<String>, points: Vec<Point>) -> Self {
        PointCloud { points, frame: frame.into() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// True when every point carries an intensity value.
    pub fn has_intensity(&self) -> bool {
        !self.points.is_empty() && self.points.iter().all(|p| p.intensity.is_some())
    }

    pub fn bounds(&self) -> Option<Aabb> {
        let first = self.points.first()?;
        let mut b = Aabb { min: first.xyz(), max: first.xyz() };
        for p in &self.points[1..] {
            for (axis, v) in p.xyz().into_iter().enumerate() {
                b.min[axis] = b.min[axis].min(v);
                b.max[axis] = b.max[axis].max(v);
            }
        }
        Some(b)
    }

    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        transform_cloud(self, t)
    }
}

/// Maps every point through `t`, keeping intensities.
pub fn transform_cloud(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let v = t.transform_point(&p.coords());
            Point { x: v.x, y: v.y, z: v.z, intensity: p.intensity }
        })
        .collect();
    PointCloud { points, frame: cloud.frame.clone() }
}

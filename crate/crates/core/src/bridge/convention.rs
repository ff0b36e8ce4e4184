//! Axis conventions of renderer clients.
//!
//! The map frame is right-handed Z-up. Each convention is described by the
//! signed permutation `M` that takes map coordinates into it:
//!
//! | convention      | map (x, y, z) becomes |
//! |-----------------|-----------------------|
//! | right, Z-up     | (x, y, z)             |
//! | left,  Y-up     | (x, z, y)             |
//! | right, Y-up     | (x, z, -y)            |
//! | left,  Z-up     | (x, -y, z)            |
//!
//! Points map as `p' = M p`. Rotations are conjugated, `R' = M R Mᵀ`, which
//! for a quaternion `(w, v)` is `(w, det(M) · M v)`.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::frames::RigidTransform;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Handedness {
    Right,
    Left,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UpAxis {
    Y,
    Z,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RendererConvention {
    pub handedness: Handedness,
    pub up_axis: UpAxis,
}

impl Default for RendererConvention {
    fn default() -> Self {
        Self::MAP
    }
}

impl RendererConvention {
    pub const MAP: RendererConvention = RendererConvention { handedness: Handedness::Right, up_axis: UpAxis::Z };
    /// Typical game-engine convention.
    pub const LEFT_Y_UP: RendererConvention = RendererConvention { handedness: Handedness::Left, up_axis: UpAxis::Y };

    pub const ALL: [RendererConvention; 4] = [
        RendererConvention::MAP,
        RendererConvention::LEFT_Y_UP,
        RendererConvention { handedness: Handedness::Right, up_axis: UpAxis::Y },
        RendererConvention { handedness: Handedness::Left, up_axis: UpAxis::Z },
    ];

    /// Map coordinates → this convention.
    pub fn from_map_matrix(&self) -> Matrix3<f64> {
        match (self.handedness, self.up_axis) {
            (Handedness::Right, UpAxis::Z) => Matrix3::identity(),
            (Handedness::Left, UpAxis::Y) => Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0),
            (Handedness::Right, UpAxis::Y) => Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0),
            (Handedness::Left, UpAxis::Z) => Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0),
        }
    }

    pub fn parse(s: &str) -> Option<RendererConvention> {
        match s.to_ascii_lowercase().as_str() {
            "rh-z-up" | "right-z-up" | "map" => Some(Self::ALL[0]),
            "lh-y-up" | "left-y-up" => Some(Self::ALL[1]),
            "rh-y-up" | "right-y-up" => Some(Self::ALL[2]),
            "lh-z-up" | "left-z-up" => Some(Self::ALL[3]),
            _ => None,
        }
    }
}

/// `from` coordinates → `to` coordinates.
pub fn conversion_matrix(from: RendererConvention, to: RendererConvention) -> Matrix3<f64> {
    to.from_map_matrix() * from.from_map_matrix().transpose()
}

pub fn convert_point(p: &[f64; 3], from: RendererConvention, to: RendererConvention) -> [f64; 3] {
    let v = conversion_matrix(from, to) * Vector3::from(*p);
    [v.x, v.y, v.z]
}

pub fn convert_pose(t: &RigidTransform, from: RendererConvention, to: RendererConvention) -> RigidTransform {
    if from == to {
        return *t;
    }
    let m = conversion_matrix(from, to);
    let det = m.determinant().signum();
    let q = t.rotation().quaternion();
    let v = m * q.vector() * det;
    let rotation = UnitQuaternion::new_unchecked(Quaternion::new(q.w, v.x, v.y, v.z));
    RigidTransform::new(rotation, m * t.translation())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_point_mapping() {
        assert_eq!(convert_point(&[1.0, 2.0, 3.0], RendererConvention::MAP, RendererConvention::LEFT_Y_UP), [1.0, 3.0, 2.0]);
    }

    #[test]
    fn identity_stays_identity() {
        for a in RendererConvention::ALL {
            for b in RendererConvention::ALL {
                assert_eq!(convert_pose(&RigidTransform::identity(), a, b), RigidTransform::identity());
            }
        }
    }

    #[test]
    fn rotation_matches_conjugation() {
        let t = RigidTransform::from_xyz_yaw(1.0, 2.0, 3.0, 0.7);
        for to in RendererConvention::ALL {
            let m = conversion_matrix(RendererConvention::MAP, to);
            let expected = m * t.rotation().to_rotation_matrix().matrix() * m.transpose();
            let got = convert_pose(&t, RendererConvention::MAP, to);
            assert!((got.rotation().to_rotation_matrix().matrix() - expected).abs().max() < 1e-12);
        }
    }
}

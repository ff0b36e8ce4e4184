use std::ops::Mul;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// A rigid-body transform: unit quaternion rotation followed by a translation in meters.
///
/// Quaternions are kept in canonical form (`w >= 0`) so two transforms that
/// describe the same motion compare equal component-wise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRepr", into = "TransformRepr")]
pub struct RigidTransform {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

/// On-disk layout: `{"translation": [x, y, z], "rotation": [w, x, y, z]}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformRepr {
    translation: [f64; 3],
    rotation: [f64; 4],
}

impl TryFrom<TransformRepr> for RigidTransform {
    type Error = String;

    fn try_from(r: TransformRepr) -> Result<Self, Self::Error> {
        if r.translation.iter().chain(r.rotation.iter()).any(|v| !v.is_finite()) {
            return Err("transform components must be finite".into());
        }
        let [w, x, y, z] = r.rotation;
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(format!("rotation quaternion has norm {norm}, expected 1"));
        }
        Ok(RigidTransform::from_wxyz([w, x, y, z], r.translation))
    }
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        TransformRepr { translation: t.translation_array(), rotation: t.quaternion_wxyz() }
    }
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let q = UnitQuaternion::new_normalize(*q.quaternion());
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-*q.quaternion())
    } else {
        q
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform { rotation: canonical(rotation), translation }
    }

    /// Builds from raw quaternion components; the quaternion is normalized.
    pub fn from_wxyz(q: [f64; 4], t: [f64; 3]) -> Self {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        Self::new(UnitQuaternion::from_quaternion(quat), Vector3::from(t))
    }

    /// Wraps already-unit components without renormalizing, so the stored
    /// bits are exactly the inputs. Used by decoders that must round-trip.
    pub(crate) fn from_wxyz_exact(q: [f64; 4], t: [f64; 3]) -> Self {
        let mut quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        if quat.w < 0.0 {
            quat = -quat;
        }
        RigidTransform { rotation: UnitQuaternion::new_unchecked(quat), translation: Vector3::from(t) }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        RigidTransform { rotation: UnitQuaternion::identity(), translation: Vector3::new(x, y, z) }
    }

    /// Rotation about +Z by `yaw` radians, then translation.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw), translation)
    }

    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self::from_yaw(yaw, Vector3::new(x, y, z))
    }

    /// Rotation given as a scaled axis (axis * angle).
    pub fn from_scaled_axis(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::from_scaled_axis(axis_angle), translation)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn translation_array(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// Heading about +Z, from the rotated +X axis projected onto the XY plane.
    pub fn yaw(&self) -> f64 {
        let fwd = self.rotation * Vector3::x();
        fwd.y.atan2(fwd.x)
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: canonical(self.rotation * other.rotation),
            translation: self.translation + self.rotation * other.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = self.rotation.inverse();
        RigidTransform { rotation: canonical(inv), translation: -(inv * self.translation) }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Angle of the relative rotation between the two transforms, in `[0, π]`.
    /// Angle of the relative rotation, radians in [0, π]. Uses `atan2` so that
    /// tiny angles keep full precision, unlike `acos` of the dot product.
    pub fn rotation_distance(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.inverse() * other.rotation;
        2.0 * rel.imag().norm().atan2(rel.w.abs())
    }

    pub fn translation_distance(&self, other: &RigidTransform) -> f64 {
        (self.translation - other.translation).norm()
    }

    pub fn approx_eq(&self, other: &RigidTransform, tol: f64) -> bool {
        self.translation_distance(other) <= tol && self.rotation_distance(other) <= tol
    }

    /// Linear interpolation of translation and spherical interpolation of
    /// rotation; `s = 0` yields `a`, `s = 1` yields `b`.
    pub fn interpolate(a: &RigidTransform, b: &RigidTransform, s: f64) -> RigidTransform {
        let translation = a.translation + (b.translation - a.translation) * s;
        RigidTransform { rotation: slerp(&a.rotation, &b.rotation, s), translation }
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite()) && self.rotation.coords.iter().all(|v| v.is_finite())
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a RigidTransform> for &'a RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: &RigidTransform) -> RigidTransform {
        self.compose(rhs)
    }
}

/// Shortest-arc slerp, falling back to normalized lerp for nearly equal inputs.
pub fn slerp(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, s: f64) -> UnitQuaternion<f64> {
    let qa = a.coords;
    let mut qb = b.coords;
    let mut dot = qa.dot(&qb);
    if dot < 0.0 {
        qb = -qb;
        dot = -dot;
    }
    let out = if dot > 1.0 - 1e-12 {
        qa + (qb - qa) * s
    } else {
        let theta = dot.min(1.0).acos();
        let sin_theta = theta.sin();
        let wa = ((1.0 - s) * theta).sin() / sin_theta;
        let wb = (s * theta).sin() / sin_theta;
        qa * wa + qb * wb
    };
    canonical(UnitQuaternion::new_normalize(Quaternion::from(out)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn identity_composition() {
        let i = RigidTransform::identity();
        assert_eq!(i.compose(&i), i);
    }

    #[test]
    fn inverse_composition_is_identity() {
        let t = RigidTransform::from_scaled_axis(Vector3::new(0.3, -0.2, 1.1), Vector3::new(4.0, -1.0, 2.5));
        let r = t.compose(&t.inverse());
        assert!(r.approx_eq(&RigidTransform::identity(), 1e-9));
        let r = t.inverse().compose(&t);
        assert!(r.approx_eq(&RigidTransform::identity(), 1e-9));
    }

    #[test]
    fn yaw_composition_matches_matrix_product() {
        // [R|t][R|t] with R = Rz(90°), t = (1,0,0): R·R = Rz(180°), t' = t + R t = (1,1,0).
        let a = RigidTransform::from_xyz_yaw(1.0, 0.0, 0.0, FRAC_PI_2);
        let c = a.compose(&a);
        let expected = RigidTransform::from_xyz_yaw(1.0, 1.0, 0.0, PI);
        assert!(c.approx_eq(&expected, 1e-12), "{c:?}");
    }

    #[test]
    fn canonical_sign() {
        let t = RigidTransform::from_wxyz([-0.5, 0.5, 0.5, 0.5], [0.0; 3]);
        assert!(t.quaternion_wxyz()[0] >= 0.0);
        assert_eq!(t, RigidTransform::from_wxyz([0.5, -0.5, -0.5, -0.5], [0.0; 3]));
    }

    #[test]
    fn serde_layout() {
        let t = RigidTransform::from_translation(1.0, 2.0, 3.0);
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"{"translation":[1.0,2.0,3.0],"rotation":[1.0,0.0,0.0,0.0]}"#);
        let back: RigidTransform = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<RigidTransform>(r#"{"translation":[0,0,0],"rotation":[2,0,0,0]}"#).is_err());
    }

    #[test]
    fn slerp_midpoint_halves_angle() {
        let a = RigidTransform::from_yaw(0.2, Vector3::zeros());
        let b = RigidTransform::from_yaw(1.4, Vector3::zeros());
        let m = RigidTransform::interpolate(&a, &b, 0.5);
        assert!((a.rotation_distance(&m) - 0.6).abs() < 1e-9);
        assert!((m.yaw() - 0.8).abs() < 1e-9);
    }
}

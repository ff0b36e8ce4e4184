use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::frames::{RigidTransform, Timestamp};

/// Pose plus map-frame velocities, used for constant-velocity prediction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionState {
    pub pose: RigidTransform,
    /// m/s, map frame.
    pub linear_velocity: [f64; 3],
    /// rad/s, map frame (scaled-axis rate).
    pub angular_velocity: [f64; 3],
    pub stamp: Timestamp,
}

impl MotionState {
    pub fn at_rest(pose: RigidTransform, stamp: Timestamp) -> Self {
        MotionState { pose, linear_velocity: [0.0; 3], angular_velocity: [0.0; 3], stamp }
    }

    pub fn is_finite(&self) -> bool {
        self.pose.is_finite()
            && self.linear_velocity.iter().chain(self.angular_velocity.iter()).all(|v| v.is_finite())
    }

    pub fn speed(&self) -> f64 {
        Vector3::from(self.linear_velocity).norm()
    }
}

/// Constant-velocity extrapolation to `to`; rotation integrates the angular
/// velocity as an axis-angle increment applied in the map frame. Times before
/// the state stamp return the state pose unchanged.
pub fn predict(state: &MotionState, to: Timestamp) -> RigidTransform {
    if to <= state.stamp {
        return state.pose;
    }
    let dt = to.seconds_since(state.stamp);
    let v = Vector3::from(state.linear_velocity);
    let w = Vector3::from(state.angular_velocity);
    let rot = UnitQuaternion::from_scaled_axis(w * dt) * state.pose.rotation();
    RigidTransform::new(rot, state.pose.translation() + v * dt)
}

/// Velocities that carry `from` onto `to` over `dt` seconds.
pub fn finite_difference(from: &RigidTransform, to: &RigidTransform, dt: f64) -> ([f64; 3], [f64; 3]) {
    if dt <= 0.0 {
        return ([0.0; 3], [0.0; 3]);
    }
    let v = (to.translation() - from.translation()) / dt;
    let dq = to.rotation() * from.rotation().inverse();
    let w = dq.scaled_axis() / dt;
    ([v.x, v.y, v.z], [w.x, w.y, w.z])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn zero_velocity_holds_pose() {
        let p = RigidTransform::from_xyz_yaw(1.0, 2.0, 0.0, 0.3);
        let s = MotionState::at_rest(p, Timestamp::ZERO);
        assert_eq!(predict(&s, Timestamp::from_secs_f64(3.0)), p);
    }

    #[test]
    fn linear_velocity() {
        let mut s = MotionState::at_rest(RigidTransform::identity(), Timestamp::ZERO);
        s.linear_velocity = [1.0, 0.0, 0.0];
        let p = predict(&s, Timestamp::from_secs_f64(0.5));
        assert!(p.approx_eq(&RigidTransform::from_translation(0.5, 0.0, 0.0), 1e-12));
    }

    #[test]
    fn angular_velocity_yaw_quarter_turn() {
        // axis-angle oracle: ω = (0,0,π), dt = 0.5 → rotation of π/2 about +Z
        let mut s = MotionState::at_rest(RigidTransform::identity(), Timestamp::ZERO);
        s.angular_velocity = [0.0, 0.0, PI];
        let p = predict(&s, Timestamp::from_secs_f64(0.5));
        assert!((p.yaw() - FRAC_PI_2).abs() < 1e-12);
        let x = p.transform_vector(&Vector3::x());
        assert!((x - Vector3::y()).norm() < 1e-12);
    }

    #[test]
    fn finite_difference_inverts_predict() {
        let from = RigidTransform::from_xyz_yaw(1.0, 0.0, 0.0, 0.2);
        let to = RigidTransform::from_xyz_yaw(1.5, 0.25, 0.0, 0.35);
        let (v, w) = finite_difference(&from, &to, 0.1);
        let s = MotionState { pose: from, linear_velocity: v, angular_velocity: w, stamp: Timestamp::ZERO };
        assert!(predict(&s, Timestamp::from_secs_f64(0.1)).approx_eq(&to, 1e-9));
    }
}

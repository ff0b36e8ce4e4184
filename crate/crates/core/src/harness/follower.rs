//! Point-kinematic pure-pursuit vehicle with a trapezoidal speed profile.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::frames::RigidTransform;
use crate::scenario::RouteWaypoint;

/// Leaving the route by more than this aborts the run.
pub const MAX_ROUTE_DEVIATION: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaypointFollower {
    /// Pure-pursuit lookahead, meters.
    pub lookahead: f64,
    /// Acceleration and braking limit, m/s².
    pub max_accel: f64,
    /// Standstill at stop waypoints, seconds.
    pub stop_hold: f64,
    /// Steering limit, 1/m.
    pub max_curvature: f64,
}

impl Default for WaypointFollower {
    fn default() -> Self {
        WaypointFollower { lookahead: 3.0, max_accel: 2.0, stop_hold: 3.0, max_curvature: 0.25 }
    }
}

impl WaypointFollower {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("lookahead", self.lookahead), ("max_accel", self.max_accel), ("max_curvature", self.max_curvature)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive"));
            }
        }
        if !(self.stop_hold >= 0.0 && self.stop_hold.is_finite()) {
            return Err("stop_hold must be non-negative".into());
        }
        Ok(())
    }
}

/// Route polyline with cumulative arc length.
#[derive(Clone, Debug)]
pub struct RoutePath {
    xy: Vec<[f64; 2]>,
    z: Vec<f64>,
    cum: Vec<f64>,
    speed: Vec<f64>,
    /// Waypoint indices where the vehicle must come to rest; always ends
    /// with the final waypoint.
    stops: Vec<usize>,
}

impl RoutePath {
    pub fn new(route: &[RouteWaypoint]) -> Result<RoutePath, String> {
        if route.len() < 2 {
            return Err("route needs at least two waypoints".into());
        }
        let xy: Vec<[f64; 2]> = route.iter().map(|w| [w.position[0], w.position[1]]).collect();
        let mut cum = vec![0.0];
        for w in xy.windows(2) {
            let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            if d <= 0.0 {
                return Err("consecutive route waypoints coincide in the horizontal plane".into());
            }
            cum.push(cum.last().unwrap() + d);
        }
        let mut stops: Vec<usize> = (1..route.len() - 1).filter(|&i| route[i].stop).collect();
        stops.push(route.len() - 1);
        Ok(RoutePath {
            xy,
            z: route.iter().map(|w| w.position[2]).collect(),
            cum,
            speed: route.iter().map(|w| w.target_speed).collect(),
            stops,
        })
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn stop_arcs(&self) -> Vec<f64> {
        self.stops.iter().map(|&i| self.cum[i]).collect()
    }

    /// Point and heading at arc length `s`, clamped to the route.
    pub fn at(&self, s: f64) -> ([f64; 3], f64) {
        let s = s.clamp(0.0, self.length());
        let i = (self.cum.partition_point(|&c| c <= s)).clamp(1, self.xy.len() - 1) - 1;
        let seg = self.cum[i + 1] - self.cum[i];
        let u = ((s - self.cum[i]) / seg).clamp(0.0, 1.0);
        let (a, b) = (self.xy[i], self.xy[i + 1]);
        let p = [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1]), self.z[i] + u * (self.z[i + 1] - self.z[i])];
        (p, (b[1] - a[1]).atan2(b[0] - a[0]))
    }

    /// Projects onto segments near `hint`: (segment, arc length, distance).
    fn project(&self, p: [f64; 2], hint: usize) -> (usize, f64, f64) {
        let lo = hint.saturating_sub(2);
        let hi = (hint + 40).min(self.xy.len() - 1);
        let mut best = (hint, self.cum[hint], f64::INFINITY);
        for i in lo..hi {
            let (a, b) = (self.xy[i], self.xy[i + 1]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len2 = dx * dx + dy * dy;
            let u = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
            let (qx, qy) = (a[0] + u * dx, a[1] + u * dy);
            let d = (p[0] - qx).hypot(p[1] - qy);
            if d < best.2 {
                best = (i, self.cum[i] + u * len2.sqrt(), d);
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehiclePhase {
    Driving,
    /// At a stop waypoint, counting down the hold.
    Holding,
    /// At a stop waypoint, waiting for an operator proceed command.
    AwaitingProceed,
    Finished,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub speed: f64,
    pub phase: VehiclePhase,
    seg: usize,
    next_stop: usize,
    hold_ticks_left: u64,
}

impl VehicleState {
    pub fn pose(&self) -> RigidTransform {
        RigidTransform::from_yaw(self.yaw, Vector3::new(self.x, self.y, self.z))
    }

    /// Index (into the route's stop list) of the next stop to reach.
    pub fn next_stop(&self) -> usize {
        self.next_stop
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deviation(pub f64);

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

impl WaypointFollower {
    pub fn start(&self, path: &RoutePath) -> VehicleState {
        let ([x, y, z], yaw) = path.at(0.0);
        VehicleState { x, y, z, yaw, speed: 0.0, phase: VehiclePhase::Driving, seg: 0, next_stop: 0, hold_ticks_left: 0 }
    }

    /// Releases a vehicle holding at a stop.
    pub fn proceed(&self, state: &mut VehicleState) {
        if matches!(state.phase, VehiclePhase::Holding | VehiclePhase::AwaitingProceed) {
            state.phase = VehiclePhase::Driving;
            state.hold_ticks_left = 0;
            state.next_stop += 1;
        }
    }

    /// Advances one tick. With `operator_holds`, stops wait for
    /// [`proceed`](Self::proceed) instead of a timer.
    pub fn step(&self, path: &RoutePath, state: &mut VehicleState, dt: f64, operator_holds: bool) -> Result<(), Deviation> {
        match state.phase {
            VehiclePhase::Finished | VehiclePhase::AwaitingProceed => return Ok(()),
            VehiclePhase::Holding => {
                state.hold_ticks_left = state.hold_ticks_left.saturating_sub(1);
                if state.hold_ticks_left == 0 {
                    self.proceed(state);
                }
                return Ok(());
            }
            VehiclePhase::Driving => {}
        }

        let (seg, s, dev) = path.project([state.x, state.y], state.seg);
        if dev > MAX_ROUTE_DEVIATION {
            return Err(Deviation(dev));
        }
        state.seg = seg;
        let a = self.max_accel;
        let stop_wp = path.stops[state.next_stop];
        let d_stop = (path.cum[stop_wp] - s).max(0.0);

        // Speed command: segment target, braking envelope for slower segments
        // ahead and for the next stop.
        let mut v_cmd = path.speed[(seg + 1).min(path.speed.len() - 1)];
        let horizon = state.speed * state.speed / (2.0 * a) + 1.0;
        let mut j = seg + 1;
        while j < stop_wp && path.cum[j] - s <= horizon {
            let v_next = path.speed[j + 1];
            v_cmd = v_cmd.min((v_next * v_next + 2.0 * a * (path.cum[j] - s)).sqrt());
            j += 1;
        }
        v_cmd = v_cmd.min((2.0 * a * d_stop).sqrt());
        let v_new = if v_cmd >= state.speed { (state.speed + a * dt).min(v_cmd) } else { v_cmd };

        let mut ds = v_new * dt;
        let arriving = ds >= d_stop;
        if arriving {
            ds = d_stop;
        }

        let (target, _) = path.at(s + self.lookahead);
        let (tx, ty) = (target[0] - state.x, target[1] - state.y);
        let ld = tx.hypot(ty);
        let kappa = if ld > 1e-9 {
            let alpha = wrap(ty.atan2(tx) - state.yaw);
            (2.0 * alpha.sin() / ld).clamp(-self.max_curvature, self.max_curvature)
        } else {
            0.0
        };
        let yaw_mid = state.yaw + 0.5 * kappa * ds;
        state.x += ds * yaw_mid.cos();
        state.y += ds * yaw_mid.sin();
        state.yaw = wrap(state.yaw + kappa * ds);
        let (on_route, _) = path.at(s + ds);
        state.z = on_route[2];
        state.speed = if arriving { 0.0 } else { v_new };

        if arriving {
            if state.next_stop + 1 == path.stops.len() {
                state.phase = VehiclePhase::Finished;
            } else if operator_holds {
                state.phase = VehiclePhase::AwaitingProceed;
            } else {
                let ticks = (self.stop_hold / dt).round() as u64;
                if ticks == 0 {
                    state.next_stop += 1;
                } else {
                    state.phase = VehiclePhase::Holding;
                    state.hold_ticks_left = ticks;
                }
            }
        }
        Ok(())
    }
}

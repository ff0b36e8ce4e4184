//! Seeded synthetic test area: a rounded-rectangle loop road with ground,
//! stepped façades and poles, plus a matching crosswalk scenario.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sim::{run_sim, SimConfig};
use super::trajectory::Trajectory;
use super::HarnessError;
use crate::frames::{RigidTransform, MAP_FRAME};
use crate::pointcloud::{Point, PointCloud, PointCloudMap};
use crate::scenario::{
    AgentKind, BoxVolume, EventAction, MapRef, PathPoint, RouteWaypoint, Scenario, TriggerBinding, TriggerShape,
    TriggerVolume, VirtualAgent, DEFAULT_RENDER_DISTANCE, SCENARIO_VERSION,
};

pub const CORNER_RADIUS: f64 = 12.0;
pub const ROAD_HALF_WIDTH: f64 = 3.5;
pub const SIDEWALK_EDGE: f64 = 6.0;
pub const POLE_OFFSET: f64 = 6.5;
pub const FACADE_OFFSET: f64 = 9.0;
/// Trigger volume center, meters before the crosswalk.
pub const TRIGGER_LEAD: f64 = 10.0;
/// Stop waypoint, meters before the crosswalk.
pub const STOP_LEAD: f64 = 2.5;
pub const PEDESTRIAN_SPEED: f64 = 1.4;
const TRIGGER_HALF_LENGTH: f64 = 1.5;
/// Keeps each trigger clear of the previous crosswalk.
const MIN_CROSSWALK_SPACING: f64 = 12.0;
const WAYPOINT_SPACING: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    /// Loop length along the road centerline, meters.
    pub route_length: f64,
    pub crosswalks: usize,
    pub seed: u64,
    pub cruise_speed: f64,
    pub map_points: usize,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec { route_length: 300.0, crosswalks: 15, seed: 7, cruise_speed: 5.0, map_points: 100_000 }
    }
}

impl WorldSpec {
    /// The demo course: 15 crosswalks on a 300 m loop.
    pub fn demo() -> Self {
        Self::default()
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    pub map: Arc<PointCloudMap>,
    pub ground_truth: Trajectory,
    pub generator_seed: u64,
    pub spec: WorldSpec,
    /// Arc length of each crosswalk along the loop.
    pub crosswalk_arcs: Vec<f64>,
}

/// Centerline of a counter-clockwise rounded rectangle starting at the
/// beginning of the lower straight, heading +x.
#[derive(Clone, Debug)]
pub struct LoopRoad {
    long: f64,
    short: f64,
    radius: f64,
}

impl LoopRoad {
    pub fn new(length: f64) -> Result<LoopRoad, String> {
        let radius = CORNER_RADIUS;
        let straights = length - 2.0 * PI * radius;
        if straights <= 0.0 {
            return Err(format!("route length must exceed {:.1} m", 2.0 * PI * radius));
        }
        // long straights twice the short ones
        let short = straights / 6.0;
        Ok(LoopRoad { long: 2.0 * short, short, radius })
    }

    pub fn length(&self) -> f64 {
        2.0 * (self.long + self.short) + 2.0 * PI * self.radius
    }

    /// (start arc, length, heading) of the four straights.
    pub fn straights(&self) -> [(f64, f64, f64); 4] {
        let q = FRAC_PI_2 * self.radius;
        let mut s = 0.0;
        let mut out = [(0.0, 0.0, 0.0); 4];
        for (k, len) in [self.long, self.short, self.long, self.short].into_iter().enumerate() {
            out[k] = (s, len, k as f64 * FRAC_PI_2);
            s += len + q;
        }
        out
    }

    /// Point (z = 0) and heading at arc length `s`, wrapped onto the loop.
    pub fn at(&self, s: f64) -> ([f64; 2], f64) {
        let s = s.rem_euclid(self.length());
        let q = FRAC_PI_2 * self.radius;
        let mut p = [0.0, 0.0];
        let mut rest = s;
        for (k, len) in [self.long, self.short, self.long, self.short].into_iter().enumerate() {
            let heading = k as f64 * FRAC_PI_2;
            let (c, sn) = (heading.cos(), heading.sin());
            if rest <= len {
                return ([p[0] + rest * c, p[1] + rest * sn], heading);
            }
            p = [p[0] + len * c, p[1] + len * sn];
            rest -= len;
            // corner: left turn about a center on the left normal
            let center = [p[0] - self.radius * sn, p[1] + self.radius * c];
            let theta = rest.min(q) / self.radius;
            let start_angle = heading - FRAC_PI_2;
            let a = start_angle + theta;
            let here = [center[0] + self.radius * a.cos(), center[1] + self.radius * a.sin()];
            if rest <= q {
                return (here, heading + theta);
            }
            p = here;
            rest -= q;
        }
        (p, 2.0 * PI)
    }

    /// Offset to the left of travel by `lateral` meters.
    pub fn offset(&self, s: f64, lateral: f64, z: f64) -> [f64; 3] {
        let (p, h) = self.at(s);
        [p[0] - lateral * h.sin(), p[1] + lateral * h.cos(), z]
    }
}

fn setback_profile(rng: &mut ChaCha8Rng, length: f64) -> Vec<(f64, f64)> {
    // (start arc, setback) pieces covering [0, length)
    let mut out = Vec::new();
    let mut s = 0.0;
    while s < length {
        out.push((s, rng.gen_range(0..3) as f64));
        s += rng.gen_range(6.0..12.0);
    }
    out
}

fn setback_at(profile: &[(f64, f64)], s: f64) -> f64 {
    let i = profile.partition_point(|p| p.0 <= s);
    profile[i.saturating_sub(1)].1
}

fn generate_map(road: &LoopRoad, n: usize, rng: &mut ChaCha8Rng) -> PointCloud {
    let len = road.length();
    let profiles = [setback_profile(rng, len), setback_profile(rng, len)];
    let n_ground = n * 35 / 100;
    let n_poles = n * 15 / 100;
    let n_walls = n - n_ground - n_poles;
    let mut pts = Vec::with_capacity(n);

    for _ in 0..n_ground {
        let s = rng.gen_range(0.0..len);
        let u = rng.gen_range(-FACADE_OFFSET..FACADE_OFFSET);
        let [x, y, z] = road.offset(s, u, 0.0);
        pts.push(Point::new(x, y, z));
    }

    // Step walls between setback pieces get a share proportional to their width.
    let steps: Vec<(usize, f64, f64, f64)> = profiles
        .iter()
        .enumerate()
        .flat_map(|(side, prof)| {
            (1..prof.len()).filter(|&i| prof[i].1 != prof[i - 1].1).map(move |i| (side, prof[i].0, prof[i - 1].1, prof[i].1))
        })
        .collect();
    let step_width: f64 = steps.iter().map(|s| (s.3 - s.2).abs()).sum();
    let facade_area = 2.0 * len;
    let n_steps = ((n_walls as f64) * step_width / (facade_area + step_width)).round() as usize;
    for _ in 0..n_walls - n_steps {
        let side = rng.gen_range(0..2usize);
        let s = rng.gen_range(0.0..len);
        let off = FACADE_OFFSET + setback_at(&profiles[side], s);
        let z = rng.gen_range(0.0..6.0);
        let sign = if side == 0 { 1.0 } else { -1.0 };
        let [x, y, z] = road.offset(s, sign * off, z);
        pts.push(Point::new(x, y, z));
    }
    if !steps.is_empty() {
        for _ in 0..n_steps {
            let (side, s, a, b) = steps[rng.gen_range(0..steps.len())];
            let off = FACADE_OFFSET + rng.gen_range(a.min(b)..=a.max(b));
            let sign = if side == 0 { 1.0 } else { -1.0 };
            let z = rng.gen_range(0.0..6.0);
            let [x, y, z] = road.offset(s, sign * off, z);
            pts.push(Point::new(x, y, z));
        }
    } else {
        // degenerate profile: keep the point budget on the façades
        for _ in 0..n_steps {
            let s = rng.gen_range(0.0..len);
            let [x, y, z] = road.offset(s, FACADE_OFFSET, rng.gen_range(0.0..6.0));
            pts.push(Point::new(x, y, z));
        }
    }

    let mut poles = Vec::new();
    let mut s = 4.0;
    while s < len - 4.0 {
        for sign in [1.0, -1.0] {
            let jitter = rng.gen_range(-1.5..1.5);
            poles.push(road.offset(s + jitter, sign * POLE_OFFSET, 0.0));
        }
        s += 12.0;
    }
    for _ in 0..n_poles {
        let c = poles[rng.gen_range(0..poles.len())];
        let a = rng.gen_range(0.0..2.0 * PI);
        let z = rng.gen_range(0.0..4.0);
        pts.push(Point::new(c[0] + 0.15 * a.cos(), c[1] + 0.15 * a.sin(), z));
    }
    PointCloud::from_points(MAP_FRAME, pts)
}

/// Crosswalk arcs, spread over the straights by largest remainder.
fn place_crosswalks(road: &LoopRoad, count: usize) -> Result<Vec<f64>, String> {
    let straights = road.straights();
    let usable: Vec<f64> = straights.iter().map(|s| (s.1 - TRIGGER_LEAD - TRIGGER_HALF_LENGTH - 2.0).max(0.0)).collect();
    let total: f64 = usable.iter().sum();
    let quotas: Vec<f64> = usable.iter().map(|u| count as f64 * u / total).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let mut left = count - alloc.iter().sum::<usize>();
    for &i in &order {
        if left == 0 {
            break;
        }
        alloc[i] += 1;
        left -= 1;
    }
    let mut arcs = Vec::new();
    for (k, &(start, len, _)) in straights.iter().enumerate() {
        let n = alloc[k];
        if n == 0 {
            continue;
        }
        let lo = start + TRIGGER_LEAD + TRIGGER_HALF_LENGTH + 1.0;
        let hi = start + len - 1.0;
        if hi < lo {
            return Err(format!("straight {k} is too short for a crosswalk"));
        }
        if n == 1 {
            arcs.push(0.5 * (lo + hi));
            continue;
        }
        let spacing = (hi - lo) / (n - 1) as f64;
        if spacing < MIN_CROSSWALK_SPACING {
            return Err(format!("{count} crosswalks do not fit on a {:.0} m loop", road.length()));
        }
        arcs.extend((0..n).map(|i| lo + i as f64 * spacing));
    }
    Ok(arcs)
}

fn build_route(road: &LoopRoad, stops: &[f64], speed: f64) -> Vec<RouteWaypoint> {
    let end = road.length() - 1.0;
    let mut arcs: Vec<(f64, bool)> = Vec::new();
    let mut s = 0.0;
    while s < end {
        if stops.iter().all(|&st| (st - s).abs() > 0.3) {
            arcs.push((s, false));
        }
        s += WAYPOINT_SPACING;
    }
    arcs.extend(stops.iter().map(|&s| (s, true)));
    arcs.push((end, false));
    arcs.sort_by(|a, b| a.0.total_cmp(&b.0));
    arcs.into_iter()
        .map(|(s, stop)| RouteWaypoint { position: road.offset(s, 0.0, 0.0), target_speed: speed, stop })
        .collect()
}

fn axis_box(road: &LoopRoad, s: f64) -> BoxVolume {
    let (p, heading) = road.at(s);
    let along_x = heading.cos().abs() > 0.5;
    let half = if along_x {
        [TRIGGER_HALF_LENGTH, ROAD_HALF_WIDTH, 2.0]
    } else {
        [ROAD_HALF_WIDTH, TRIGGER_HALF_LENGTH, 2.0]
    };
    BoxVolume { center: [p[0], p[1], 0.0], half_extents: half }
}

fn build_scenario(road: &LoopRoad, crosswalks: &[f64], speed: f64, map: &PointCloudMap) -> Scenario {
    let mut scenario = Scenario {
        portobello_scenario: SCENARIO_VERSION,
        map_ref: MapRef { path: "world.pmap".into(), sha256: Some(map.hash().to_string()) },
        render_distance: DEFAULT_RENDER_DISTANCE,
        agents: Vec::new(),
        triggers: Vec::new(),
        bindings: Vec::new(),
        route: build_route(road, &crosswalks.iter().map(|c| c - STOP_LEAD).collect::<Vec<_>>(), speed),
    };
    for (k, &c) in crosswalks.iter().enumerate() {
        let n = k + 1;
        let from = road.offset(c, -SIDEWALK_EDGE, 0.0);
        let to = road.offset(c, SIDEWALK_EDGE, 0.0);
        let yaw = (to[1] - from[1]).atan2(to[0] - from[0]);
        scenario.agents.push(VirtualAgent {
            id: format!("ped_{n:02}"),
            kind: AgentKind::Pedestrian,
            initial_pose: RigidTransform::from_yaw(yaw, Vector3::from(from)),
            path: vec![PathPoint { waypoint: to, speed: PEDESTRIAN_SPEED }],
            initially_active: true,
        });
        scenario.triggers.push(TriggerVolume {
            id: format!("xwalk_{n:02}"),
            shape: TriggerShape::Box(axis_box(road, c - TRIGGER_LEAD)),
            one_shot: true,
        });
        scenario.bindings.push(TriggerBinding {
            trigger_id: format!("xwalk_{n:02}"),
            actions: vec![EventAction::StartAgent(format!("ped_{n:02}")), EventAction::EmitMarker(format!("crosswalk_{n:02}"))],
        });
    }
    scenario
}

/// Deterministic from `spec.seed`. The ground truth is the in-lab vehicle's
/// own drive over the generated scenario.
pub fn synthesize_world(spec: &WorldSpec) -> Result<(SyntheticWorld, Scenario), HarnessError> {
    if !(spec.route_length > 0.0) || !(spec.cruise_speed > 0.0) || spec.map_points == 0 {
        return Err(HarnessError::InvalidInput("route length, cruise speed and map size must be positive".into()));
    }
    let road = LoopRoad::new(spec.route_length).map_err(HarnessError::InvalidInput)?;
    let crosswalks = place_crosswalks(&road, spec.crosswalks).map_err(HarnessError::InvalidInput)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let map = Arc::new(PointCloudMap::new(generate_map(&road, spec.map_points, &mut rng)));
    let scenario = build_scenario(&road, &crosswalks, spec.cruise_speed, &map);
    let log = run_sim(&scenario, &SimConfig { seed: spec.seed, ..SimConfig::default() })?;
    let ground_truth = log.pose_trajectory();
    let world = SyntheticWorld { map, ground_truth, generator_seed: spec.seed, spec: spec.clone(), crosswalk_arcs: crosswalks };
    Ok((world, scenario))
}

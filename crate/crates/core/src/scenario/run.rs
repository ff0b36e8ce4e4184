//! Execution state of a scenario: trigger arming, agent kinematics and the
//! render-distance filter.

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::exact::horizontal_within;
use super::{EventAction, Scenario};
use crate::frames::{RigidTransform, Timestamp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub stamp: Timestamp,
    pub trigger_id: String,
    pub vehicle_pose_at_fire: RigidTransform,
    pub actions_executed: Vec<EventAction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: String,
    pub pose: RigidTransform,
    pub active: bool,
    pub started: bool,
    pub halted: bool,
    /// Index of the path waypoint currently being approached.
    pub next_waypoint: usize,
    pub distance_traveled: f64,
}

impl AgentState {
    pub fn position(&self) -> [f64; 3] {
        self.pose.translation_array()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriggerState {
    pub id: String,
    pub armed: bool,
    pub fired: u32,
    #[serde(skip)]
    inside: bool,
}

/// Immutable view of a run, handed to publishers and HTTP handlers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub stamp: Timestamp,
    pub vehicle: Option<RigidTransform>,
    pub agents: Vec<AgentState>,
    pub triggers: Vec<TriggerState>,
    pub visible: BTreeSet<String>,
}

#[derive(Clone, Debug)]
pub struct ScenarioRun {
    scenario: Arc<Scenario>,
    agents: Vec<AgentState>,
    triggers: Vec<TriggerState>,
    markers: Vec<String>,
    last_vehicle: Option<RigidTransform>,
    last_stamp: Timestamp,
}

impl ScenarioRun {
    pub fn new(scenario: Arc<Scenario>) -> Self {
        let agents = scenario
            .agents
            .iter()
            .map(|a| AgentState {
                id: a.id.clone(),
                pose: a.initial_pose,
                active: a.initially_active,
                started: false,
                halted: a.path.is_empty(),
                next_waypoint: 0,
                distance_traveled: 0.0,
            })
            .collect();
        let triggers = scenario
            .triggers
            .iter()
            .map(|t| TriggerState { id: t.id.clone(), armed: true, fired: 0, inside: false })
            .collect();
        ScenarioRun { scenario, agents, triggers, markers: Vec::new(), last_vehicle: None, last_stamp: Timestamp(0) }
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn triggers(&self) -> &[TriggerState] {
        &self.triggers
    }

    /// Labels emitted by `EmitMarker` actions, in order.
    pub fn markers(&self) -> &[String] {
        &self.markers
    }

    pub fn agent(&self, id: &str) -> Option<&AgentState> {
        self.agents.iter().find(|a| a.id == id)
    }

    /// Fires every trigger the vehicle origin entered since the previous step.
    pub fn trigger_step(&mut self, vehicle_pose: &RigidTransform, stamp: Timestamp) -> Vec<TriggerEvent> {
        let origin = vehicle_pose.translation_array();
        self.last_vehicle = Some(*vehicle_pose);
        self.last_stamp = stamp;
        let mut fired = Vec::new();
        for (i, t) in self.scenario.triggers.iter().enumerate() {
            let inside = t.shape.contains(&origin);
            let state = &mut self.triggers[i];
            let entered = inside && !state.inside;
            state.inside = inside;
            if entered && state.armed {
                state.fired += 1;
                if t.one_shot {
                    state.armed = false;
                }
                fired.push(i);
            }
        }
        let scenario = Arc::clone(&self.scenario);
        fired
            .into_iter()
            .map(|i| {
                let id = &scenario.triggers[i].id;
                let mut executed = Vec::new();
                for b in scenario.bindings.iter().filter(|b| &b.trigger_id == id) {
                    for action in &b.actions {
                        self.apply(action);
                        executed.push(action.clone());
                    }
                }
                TriggerEvent { stamp, trigger_id: id.clone(), vehicle_pose_at_fire: *vehicle_pose, actions_executed: executed }
            })
            .collect()
    }

    fn apply(&mut self, action: &EventAction) {
        match action {
            EventAction::StartAgent(id) => {
                if let Some(a) = self.agents.iter_mut().find(|a| &a.id == id) {
                    a.started = true;
                }
            }
            EventAction::StopAgent(id) => {
                if let Some(a) = self.agents.iter_mut().find(|a| &a.id == id) {
                    a.started = false;
                }
            }
            EventAction::SetActive(s) => {
                if let Some(a) = self.agents.iter_mut().find(|a| a.id == s.agent) {
                    a.active = s.active;
                }
            }
            EventAction::EmitMarker(label) => self.markers.push(label.clone()),
        }
    }

    /// Advances every started agent by `dt` seconds along its path, carrying
    /// leftover time across waypoint boundaries.
    pub fn agent_step(&mut self, dt: f64) {
        assert!(dt > 0.0, "dt must be positive");
        for (state, spec) in self.agents.iter_mut().zip(&self.scenario.agents) {
            if !state.started || state.halted {
                continue;
            }
            let mut remaining = dt;
            let mut pos = *state.pose.translation();
            let mut rotation = *state.pose.rotation();
            while remaining > 0.0 {
                let Some(wp) = spec.path.get(state.next_waypoint) else {
                    state.halted = true;
                    break;
                };
                let target = Vector3::from(wp.waypoint);
                let delta = target - pos;
                let dist = delta.norm();
                if delta.x != 0.0 || delta.y != 0.0 {
                    rotation = *RigidTransform::from_yaw(delta.y.atan2(delta.x), Vector3::zeros()).rotation();
                }
                let reach = wp.speed * remaining;
                if reach >= dist {
                    pos = target;
                    remaining -= dist / wp.speed;
                    state.distance_traveled += dist;
                    state.next_waypoint += 1;
                    if state.next_waypoint == spec.path.len() {
                        state.halted = true;
                        break;
                    }
                } else {
                    pos += delta * (reach / dist);
                    state.distance_traveled += reach;
                    remaining = 0.0;
                }
            }
            state.pose = RigidTransform::new(rotation, pos);
        }
    }

    pub fn visible(&self, vehicle_pose: &RigidTransform) -> BTreeSet<String> {
        visibility_filter(vehicle_pose, &self.agents, self.scenario.render_distance)
    }

    pub fn snapshot(&self) -> RunSnapshot {
        let visible = self.last_vehicle.map(|v| self.visible(&v)).unwrap_or_default();
        RunSnapshot {
            stamp: self.last_stamp,
            vehicle: self.last_vehicle,
            agents: self.agents.clone(),
            triggers: self.triggers.clone(),
            visible,
        }
    }
}

/// Ids of active agents whose horizontal distance to the vehicle origin is at
/// most `render_distance` (inclusive).
pub fn visibility_filter(vehicle_pose: &RigidTransform, agents: &[AgentState], render_distance: f64) -> BTreeSet<String> {
    let v = vehicle_pose.translation();
    agents
        .iter()
        .filter(|a| {
            let p = a.pose.translation();
            a.active && horizontal_within([p.x, p.y], [v.x, v.y], render_distance)
        })
        .map(|a| a.id.clone())
        .collect()
}

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::frames::RigidTransform;

pub const SCENARIO_VERSION: u32 = 1;
pub const DEFAULT_RENDER_DISTANCE: f64 = 45.0;

fn default_render_distance() -> f64 {
    DEFAULT_RENDER_DISTANCE
}

fn yes() -> bool {
    true
}

fn is_true(v: &bool) -> bool {
    *v
}

fn is_false(v: &bool) -> bool {
    !*v
}

/// A map-anchored scenario: agents, trigger volumes, bindings and the route.
/// All coordinates are in the map frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub portobello_scenario: u32,
    pub map_ref: MapRef,
    #[serde(default = "default_render_distance")]
    pub render_distance: f64,
    #[serde(default)]
    pub agents: Vec<VirtualAgent>,
    #[serde(default)]
    pub triggers: Vec<TriggerVolume>,
    #[serde(default)]
    pub bindings: Vec<TriggerBinding>,
    #[serde(default)]
    pub route: Vec<RouteWaypoint>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapRef {
    pub path: String,
    /// Hex SHA-256 of the map file; checked against the loaded map when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Pedestrian,
    Prop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathPoint {
    pub waypoint: [f64; 3],
    /// m/s along the segment that ends at this waypoint.
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VirtualAgent {
    pub id: String,
    pub kind: AgentKind,
    pub initial_pose: RigidTransform,
    #[serde(default)]
    pub path: Vec<PathPoint>,
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub initially_active: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxVolume {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
}

/// Vertical cylinder; `center` is the mid-height point of the axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CylinderVolume {
    pub center: [f64; 3],
    pub radius: f64,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerShape {
    Box(BoxVolume),
    Cylinder(CylinderVolume),
}

impl TriggerShape {
    pub fn center(&self) -> [f64; 3] {
        match self {
            TriggerShape::Box(b) => b.center,
            TriggerShape::Cylinder(c) => c.center,
        }
    }

    /// Inclusive containment test.
    pub fn contains(&self, p: &[f64; 3]) -> bool {
        match self {
            TriggerShape::Box(b) => (0..3).all(|i| (p[i] - b.center[i]).abs() <= b.half_extents[i]),
            TriggerShape::Cylinder(c) => {
                let dx = p[0] - c.center[0];
                let dy = p[1] - c.center[1];
                (p[2] - c.center[2]).abs() <= c.height / 2.0 && dx * dx + dy * dy <= c.radius * c.radius
            }
        }
    }

    fn z_range(&self) -> (f64, f64) {
        match self {
            TriggerShape::Box(b) => (b.center[2] - b.half_extents[2], b.center[2] + b.half_extents[2]),
            TriggerShape::Cylinder(c) => (c.center[2] - c.height / 2.0, c.center[2] + c.height / 2.0),
        }
    }

    /// True when the two closed volumes share at least one point.
    pub fn overlaps(&self, other: &TriggerShape) -> bool {
        let (a0, a1) = self.z_range();
        let (b0, b1) = other.z_range();
        if a1 < b0 || b1 < a0 {
            return false;
        }
        match (self, other) {
            (TriggerShape::Box(a), TriggerShape::Box(b)) => {
                (0..2).all(|i| (a.center[i] - b.center[i]).abs() <= a.half_extents[i] + b.half_extents[i])
            }
            (TriggerShape::Cylinder(a), TriggerShape::Cylinder(b)) => {
                let d = (a.center[0] - b.center[0]).hypot(a.center[1] - b.center[1]);
                d <= a.radius + b.radius
            }
            (TriggerShape::Box(b), TriggerShape::Cylinder(c)) | (TriggerShape::Cylinder(c), TriggerShape::Box(b)) => {
                let cx = c.center[0].clamp(b.center[0] - b.half_extents[0], b.center[0] + b.half_extents[0]);
                let cy = c.center[1].clamp(b.center[1] - b.half_extents[1], b.center[1] + b.half_extents[1]);
                (c.center[0] - cx).hypot(c.center[1] - cy) <= c.radius
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerVolume {
    pub id: String,
    pub shape: TriggerShape,
    #[serde(default = "yes")]
    pub one_shot: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetActive {
    pub agent: String,
    pub active: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventAction {
    StartAgent(String),
    StopAgent(String),
    SetActive(SetActive),
    EmitMarker(String),
}

impl EventAction {
    pub fn agent_ref(&self) -> Option<&str> {
        match self {
            EventAction::StartAgent(a) | EventAction::StopAgent(a) => Some(a),
            EventAction::SetActive(s) => Some(&s.agent),
            EventAction::EmitMarker(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerBinding {
    pub trigger_id: String,
    pub actions: Vec<EventAction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteWaypoint {
    pub position: [f64; 3],
    pub target_speed: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub stop: bool,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("schema error at `{path}`: {reason}")]
    Schema { path: String, reason: String },
    #[error("dangling reference to `{0}`")]
    DanglingReference(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
}

fn schema(path: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Schema { path: path.into(), reason: reason.into() }
}

fn check_finite(path: &str, vals: &[f64]) -> Result<(), ScenarioError> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(schema(path, "values must be finite"))
    }
}

fn check_positive(path: &str, v: f64) -> Result<(), ScenarioError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(schema(path, format!("must be positive, got {v}")))
    }
}

impl Scenario {
    pub fn minimal(map_path: impl Into<String>) -> Self {
        Scenario {
            portobello_scenario: SCENARIO_VERSION,
            map_ref: MapRef { path: map_path.into(), sha256: None },
            render_distance: DEFAULT_RENDER_DISTANCE,
            agents: Vec::new(),
            triggers: Vec::new(),
            bindings: Vec::new(),
            route: Vec::new(),
        }
    }

    /// Structural checks beyond the JSON schema: version, value ranges, id
    /// uniqueness (one namespace for agents and triggers) and references.
    pub fn check(&self) -> Result<(), ScenarioError> {
        if self.portobello_scenario != SCENARIO_VERSION {
            return Err(schema("portobello_scenario", format!("unsupported version {}", self.portobello_scenario)));
        }
        check_positive("render_distance", self.render_distance)?;

        let mut ids = HashSet::new();
        for (i, a) in self.agents.iter().enumerate() {
            if a.id.is_empty() {
                return Err(schema(format!("agents[{i}].id"), "must not be empty"));
            }
            if !ids.insert(a.id.as_str()) {
                return Err(ScenarioError::DuplicateId(a.id.clone()));
            }
            if !a.initial_pose.is_finite() {
                return Err(schema(format!("agents[{i}].initial_pose"), "values must be finite"));
            }
            for (j, p) in a.path.iter().enumerate() {
                check_finite(&format!("agents[{i}].path[{j}].waypoint"), &p.waypoint)?;
                check_positive(&format!("agents[{i}].path[{j}].speed"), p.speed)?;
            }
        }
        for (i, t) in self.triggers.iter().enumerate() {
            if t.id.is_empty() {
                return Err(schema(format!("triggers[{i}].id"), "must not be empty"));
            }
            if !ids.insert(t.id.as_str()) {
                return Err(ScenarioError::DuplicateId(t.id.clone()));
            }
            match &t.shape {
                TriggerShape::Box(b) => {
                    check_finite(&format!("triggers[{i}].shape.box.center"), &b.center)?;
                    for (k, h) in b.half_extents.iter().enumerate() {
                        check_positive(&format!("triggers[{i}].shape.box.half_extents[{k}]"), *h)?;
                    }
                }
                TriggerShape::Cylinder(c) => {
                    check_finite(&format!("triggers[{i}].shape.cylinder.center"), &c.center)?;
                    check_positive(&format!("triggers[{i}].shape.cylinder.radius"), c.radius)?;
                    check_positive(&format!("triggers[{i}].shape.cylinder.height"), c.height)?;
                }
            }
        }
        let agent_ids: HashSet<&str> = self.agents.iter().map(|a| a.id.as_str()).collect();
        let trigger_ids: HashSet<&str> = self.triggers.iter().map(|t| t.id.as_str()).collect();
        for b in &self.bindings {
            if !trigger_ids.contains(b.trigger_id.as_str()) {
                return Err(ScenarioError::DanglingReference(b.trigger_id.clone()));
            }
            for a in &b.actions {
                if let Some(agent) = a.agent_ref() {
                    if !agent_ids.contains(agent) {
                        return Err(ScenarioError::DanglingReference(agent.to_string()));
                    }
                }
            }
        }
        for (i, w) in self.route.iter().enumerate() {
            check_finite(&format!("route[{i}].position"), &w.position)?;
            if !(w.target_speed >= 0.0 && w.target_speed.is_finite()) {
                return Err(schema(format!("route[{i}].target_speed"), "must be non-negative"));
            }
            if i > 0 && self.route[i - 1].position == w.position {
                return Err(schema(format!("route[{i}].position"), "repeats the previous waypoint"));
            }
        }
        Ok(())
    }

    pub fn agent_index(&self) -> HashMap<&str, usize> {
        self.agents.iter().enumerate().map(|(i, a)| (a.id.as_str(), i)).collect()
    }

    /// Hex SHA-256 of the compact serialization; identifies the scenario in run logs.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Parses and structurally validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(if path == "." { String::new() } else { path }, e.into_inner().to_string())
    })?;
    scenario.check()?;
    Ok(scenario)
}

pub fn serialize_scenario(s: &Scenario) -> String {
    serde_json::to_string_pretty(s).expect("scenario serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"portobello_scenario": 1, "map_ref": {"path": "demo.pmap"}}"#;

    #[test]
    fn minimal_gets_defaults() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.render_distance, 45.0);
        assert!(s.agents.is_empty() && s.triggers.is_empty() && s.route.is_empty());
    }

    #[test]
    fn version_required() {
        let err = parse_scenario(r#"{"map_ref": {"path": "m"}}"#).unwrap_err();
        assert!(matches!(err, ScenarioError::Schema { .. }), "{err}");
        let err = parse_scenario(r#"{"portobello_scenario": 2, "map_ref": {"path": "m"}}"#).unwrap_err();
        assert!(matches!(err, ScenarioError::Schema { ref path, .. } if path == "portobello_scenario"));
    }

    #[test]
    fn unknown_keys_name_their_path() {
        let err = parse_scenario(
            r#"{"portobello_scenario": 1, "map_ref": {"path": "m"},
                "triggers": [{"id": "t", "shape": {"box": {"center": [0,0,0], "half_extents": [1,1,1], "colour": 3}}}]}"#,
        )
        .unwrap_err();
        match err {
            ScenarioError::Schema { path, reason } => {
                assert!(path.starts_with("triggers[0].shape"), "{path}");
                assert!(reason.contains("colour"));
            }
            e => panic!("{e}"),
        }
        assert!(parse_scenario(r#"{"portobello_scenario": 1, "map_ref": {"path": "m"}, "extra": 1}"#).is_err());
    }

    #[test]
    fn dangling_agent_reference() {
        let err = parse_scenario(
            r#"{"portobello_scenario": 1, "map_ref": {"path": "m"},
                "triggers": [{"id": "t", "shape": {"cylinder": {"center": [0,0,0], "radius": 2, "height": 3}}}],
                "bindings": [{"trigger_id": "t", "actions": [{"start_agent": "ghost"}]}]}"#,
        )
        .unwrap_err();
        assert_eq!(err, ScenarioError::DanglingReference("ghost".into()));
    }

    #[test]
    fn duplicate_ids_across_kinds() {
        let text = r#"{"portobello_scenario": 1, "map_ref": {"path": "m"},
            "agents": [{"id": "x", "kind": "prop", "initial_pose": {"translation": [0,0,0], "rotation": [1,0,0,0]}}],
            "triggers": [{"id": "x", "shape": {"box": {"center": [0,0,0], "half_extents": [1,1,1]}}}]}"#;
        assert_eq!(parse_scenario(text).unwrap_err(), ScenarioError::DuplicateId("x".into()));
    }

    #[test]
    fn non_positive_values_rejected() {
        let text = r#"{"portobello_scenario": 1, "map_ref": {"path": "m"},
            "triggers": [{"id": "t", "shape": {"box": {"center": [0,0,0], "half_extents": [1,0,1]}}}]}"#;
        assert!(matches!(parse_scenario(text), Err(ScenarioError::Schema { .. })));
        let text = r#"{"portobello_scenario": 1, "map_ref": {"path": "m"}, "route": [
            {"position": [0,0,0], "target_speed": 5}, {"position": [0,0,0], "target_speed": 5}]}"#;
        assert!(matches!(parse_scenario(text), Err(ScenarioError::Schema { .. })));
    }

    #[test]
    fn containment_is_inclusive() {
        let b = TriggerShape::Box(BoxVolume { center: [0.0; 3], half_extents: [1.0, 2.0, 3.0] });
        assert!(b.contains(&[1.0, -2.0, 3.0]));
        assert!(!b.contains(&[1.0 + 1e-12, 0.0, 0.0]));
        let c = TriggerShape::Cylinder(CylinderVolume { center: [0.0; 3], radius: 5.0, height: 2.0 });
        assert!(c.contains(&[3.0, 4.0, 1.0]));
        assert!(!c.contains(&[3.0, 4.0, 1.01]));
    }

    #[test]
    fn overlap_cases() {
        let b1 = TriggerShape::Box(BoxVolume { center: [0.0; 3], half_extents: [1.0; 3] });
        let b2 = TriggerShape::Box(BoxVolume { center: [2.0, 0.0, 0.0], half_extents: [1.0; 3] });
        let b3 = TriggerShape::Box(BoxVolume { center: [2.1, 0.0, 0.0], half_extents: [1.0; 3] });
        assert!(b1.overlaps(&b1) && b1.overlaps(&b2) && !b1.overlaps(&b3));
        let c = TriggerShape::Cylinder(CylinderVolume { center: [2.5, 2.5, 0.0], radius: 1.0, height: 1.0 });
        assert!(!b1.overlaps(&c));
        let c2 = TriggerShape::Cylinder(CylinderVolume { center: [1.5, 0.5, 0.0], radius: 1.0, height: 1.0 });
        assert!(b1.overlaps(&c2) && c2.overlaps(&b1));
    }
}

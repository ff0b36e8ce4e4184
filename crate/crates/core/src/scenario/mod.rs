//! Map-anchored scenarios: the file model, validation against a map, and the
//! run-state that fires triggers and moves agents.

mod exact;
mod model;
mod run;
mod validate;

pub use model::{
    parse_scenario, serialize_scenario, AgentKind, BoxVolume, CylinderVolume, EventAction, MapRef, PathPoint,
    RouteWaypoint, Scenario, ScenarioError, SetActive, TriggerBinding, TriggerShape, TriggerVolume, VirtualAgent,
    DEFAULT_RENDER_DISTANCE, SCENARIO_VERSION,
};
pub use run::{visibility_filter, AgentState, RunSnapshot, ScenarioRun, TriggerEvent, TriggerState};
pub use validate::{validate_against_map, IssueKind, Severity, ValidationIssue, ValidationReport, MAX_MAP_DISTANCE};

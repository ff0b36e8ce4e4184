use serde::{Deserialize, Serialize};

use super::Scenario;
use crate::pointcloud::PointCloudMap;

/// Entities farther than this from every map point lie outside the mapped area.
pub const MAX_MAP_DISTANCE: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    OutOfMap,
    TriggerOverlap,
    MapMismatch,
    EmptyMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub severity: Severity,
    pub kind: IssueKind,
    /// Entity path such as `agents[ped_1].path[2]` or `triggers[t3]`.
    pub entity: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &ValidationIssue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &ValidationIssue> {
        self.issues.iter().filter(|i| i.severity == Severity::Warning)
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }

    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(&mut self, severity: Severity, kind: IssueKind, entity: String, message: String) {
        self.issues.push(ValidationIssue { severity, kind, entity, message });
    }
}

/// Checks a scenario against the map it will run on. Problems are collected
/// into the report rather than returned as `Err`.
pub fn validate_against_map(s: &Scenario, map: &PointCloudMap) -> ValidationReport {
    let mut report = ValidationReport::default();
    if let Some(expected) = &s.map_ref.sha256 {
        if !expected.eq_ignore_ascii_case(map.hash()) {
            report.push(
                Severity::Error,
                IssueKind::MapMismatch,
                "map_ref".into(),
                format!("scenario expects map {expected}, loaded map is {}", map.hash()),
            );
        }
    }
    if map.is_empty() {
        report.push(Severity::Error, IssueKind::EmptyMap, "map_ref".into(), "loaded map has no points".into());
        return report;
    }

    let mut check = |entity: String, p: [f64; 3]| {
        let d = map.distance_to(&p).unwrap_or(f64::INFINITY);
        if d > MAX_MAP_DISTANCE {
            report.push(
                Severity::Error,
                IssueKind::OutOfMap,
                entity,
                format!("({:.2}, {:.2}, {:.2}) is {d:.2} m from the nearest map point", p[0], p[1], p[2]),
            );
        }
    };
    for t in &s.triggers {
        check(format!("triggers[{}]", t.id), t.shape.center());
    }
    for a in &s.agents {
        check(format!("agents[{}].initial_pose", a.id), a.initial_pose.translation_array());
        for (j, p) in a.path.iter().enumerate() {
            check(format!("agents[{}].path[{j}]", a.id), p.waypoint);
        }
    }
    for (i, w) in s.route.iter().enumerate() {
        check(format!("route[{i}]"), w.position);
    }

    for (i, a) in s.triggers.iter().enumerate() {
        for b in &s.triggers[i + 1..] {
            if a.shape.overlaps(&b.shape) {
                report.push(
                    Severity::Warning,
                    IssueKind::TriggerOverlap,
                    format!("triggers[{}]", b.id),
                    format!("overlaps trigger `{}`", a.id),
                );
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::RigidTransform;
    use crate::pointcloud::{Point, PointCloud};
    use crate::scenario::{AgentKind, BoxVolume, TriggerShape, TriggerVolume, VirtualAgent};

    fn street() -> PointCloudMap {
        let pts = (0..100).flat_map(|i| (0..10).map(move |j| Point::new(i as f64 * 0.5, j as f64 * 0.5, 0.0))).collect();
        PointCloudMap::new(PointCloud::from_points("map", pts))
    }

    fn trigger(id: &str, x: f64) -> TriggerVolume {
        TriggerVolume {
            id: id.into(),
            shape: TriggerShape::Box(BoxVolume { center: [x, 2.0, 1.0], half_extents: [1.0, 2.0, 2.0] }),
            one_shot: true,
        }
    }

    #[test]
    fn mapped_trigger_is_clean() {
        let mut s = Scenario::minimal("m");
        s.triggers.push(trigger("t", 20.0));
        assert!(validate_against_map(&s, &street()).is_clean());
    }

    #[test]
    fn far_agent_is_out_of_map() {
        let mut s = Scenario::minimal("m");
        s.agents.push(VirtualAgent {
            id: "ped".into(),
            kind: AgentKind::Pedestrian,
            initial_pose: RigidTransform::from_translation(20.0, 102.0, 0.0),
            path: vec![],
            initially_active: true,
        });
        let r = validate_against_map(&s, &street());
        let errs: Vec<_> = r.errors().collect();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].kind, IssueKind::OutOfMap);
        assert!(errs[0].entity.contains("ped"));
    }

    #[test]
    fn identical_triggers_warn() {
        let mut s = Scenario::minimal("m");
        s.triggers.push(trigger("a", 20.0));
        s.triggers.push(trigger("b", 20.0));
        let r = validate_against_map(&s, &street());
        assert!(!r.has_errors());
        assert_eq!(r.warnings().next().unwrap().kind, IssueKind::TriggerOverlap);
    }

    #[test]
    fn hash_mismatch_is_error() {
        let mut s = Scenario::minimal("m");
        s.map_ref.sha256 = Some("00".repeat(32));
        let r = validate_against_map(&s, &street());
        assert_eq!(r.errors().next().unwrap().kind, IssueKind::MapMismatch);
        let map = street();
        s.map_ref.sha256 = Some(map.hash().to_uppercase());
        assert!(validate_against_map(&s, &map).is_clean());
    }
}

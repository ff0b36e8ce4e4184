use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::log::{RunLog, RunMode, RunRecord};
use super::HarnessError;
use crate::frames::Timestamp;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriggerComparison {
    pub trigger_id: String,
    /// Map-frame distance between the two firing positions, meters.
    pub position_distance: f64,
    /// `b − a`, seconds since each run's first pose.
    pub time_offset: f64,
    /// Largest distance between the same agent in both runs at firing, meters.
    pub agent_divergence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwinningReport {
    pub scenario_hash: String,
    pub mode_a: Option<RunMode>,
    pub mode_b: Option<RunMode>,
    pub sequences_equal: bool,
    pub sequence_a: Vec<String>,
    pub sequence_b: Vec<String>,
    /// Triggers fired in both runs, paired by id and occurrence.
    pub triggers: Vec<TriggerComparison>,
    pub max_position_distance: f64,
    pub mean_position_distance: f64,
    pub max_abs_time_offset: f64,
    pub max_agent_divergence: f64,
}

struct Fire<'a> {
    stamp: Timestamp,
    position: [f64; 3],
    agents: HashMap<&'a str, [f64; 3]>,
}

fn fires(log: &RunLog) -> Vec<(&str, Fire<'_>)> {
    log.records
        .iter()
        .filter_map(|r| match r {
            RunRecord::Trigger { stamp, trigger_id, vehicle_pose_at_fire, agents, .. } => Some((
                trigger_id.as_str(),
                Fire {
                    stamp: *stamp,
                    position: vehicle_pose_at_fire.translation_array(),
                    agents: agents.iter().map(|a| (a.id.as_str(), a.position)).collect(),
                },
            )),
            _ => None,
        })
        .collect()
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Compares two runs of the same scenario. Offsets are reported, never judged.
pub fn compare_runs(a: &RunLog, b: &RunLog) -> Result<TwinningReport, HarnessError> {
    let (ha, hb) = (a.scenario_hash().unwrap_or_default(), b.scenario_hash().unwrap_or_default());
    if ha != hb || ha.is_empty() {
        return Err(HarnessError::ScenarioMismatch { a: ha.to_string(), b: hb.to_string() });
    }
    let origin = |log: &RunLog| log.poses().first().map(|p| p.0).unwrap_or_default();
    let (oa, ob) = (origin(a), origin(b));
    let fa = fires(a);
    let fb = fires(b);

    let mut used = vec![false; fb.len()];
    let mut triggers = Vec::new();
    for (id, x) in &fa {
        let Some(j) = (0..fb.len()).find(|&j| !used[j] && fb[j].0 == *id) else { continue };
        used[j] = true;
        let y = &fb[j].1;
        let agent_divergence = x
            .agents
            .iter()
            .filter_map(|(aid, p)| y.agents.get(aid).map(|q| dist(p, q)))
            .fold(0.0, f64::max);
        triggers.push(TriggerComparison {
            trigger_id: id.to_string(),
            position_distance: dist(&x.position, &y.position),
            time_offset: y.stamp.seconds_since(ob) - x.stamp.seconds_since(oa),
            agent_divergence,
        });
    }
    let sequence_a: Vec<String> = fa.iter().map(|f| f.0.to_string()).collect();
    let sequence_b: Vec<String> = fb.iter().map(|f| f.0.to_string()).collect();
    let n = triggers.len().max(1) as f64;
    Ok(TwinningReport {
        scenario_hash: ha.to_string(),
        mode_a: a.mode(),
        mode_b: b.mode(),
        sequences_equal: sequence_a == sequence_b,
        max_position_distance: triggers.iter().map(|t| t.position_distance).fold(0.0, f64::max),
        mean_position_distance: triggers.iter().map(|t| t.position_distance).sum::<f64>() / n,
        max_abs_time_offset: triggers.iter().map(|t| t.time_offset.abs()).fold(0.0, f64::max),
        max_agent_divergence: triggers.iter().map(|t| t.agent_divergence).fold(0.0, f64::max),
        sequence_a,
        sequence_b,
        triggers,
    })
}

//! Run logs as newline-delimited JSON. The first line is the header.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::disturbance::Disturbance;
use super::trajectory::Trajectory;
use super::HarnessError;
use crate::frames::{RigidTransform, Timestamp};
use crate::localization::PoseEstimate;
use crate::scenario::{EventAction, TriggerEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Sim,
    Replay,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    RouteUnreachable,
    InitializationFailed,
    Stopped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSample {
    pub id: String,
    pub position: [f64; 3],
    pub yaw: f64,
    pub active: bool,
    pub visible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RunRecord {
    Header {
        mode: RunMode,
        scenario_hash: String,
        map_hash: Option<String>,
        seed: u64,
        config: serde_json::Value,
        #[serde(default)]
        initialization_error: Option<String>,
    },
    Pose {
        stamp: Timestamp,
        pose: RigidTransform,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        speed: Option<f64>,
    },
    Estimate {
        estimate: PoseEstimate,
    },
    Trigger {
        stamp: Timestamp,
        trigger_id: String,
        vehicle_pose_at_fire: RigidTransform,
        actions_executed: Vec<EventAction>,
        agents: Vec<AgentSample>,
    },
    Agents {
        stamp: Timestamp,
        agents: Vec<AgentSample>,
    },
    Disturbance {
        disturbance: Disturbance,
    },
    /// No scan arrived for longer than expected; the pose was predicted.
    Gap {
        from: Timestamp,
        to: Timestamp,
    },
    End {
        stamp: Timestamp,
        status: RunStatus,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<String>,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<RunRecord>,
}

impl RunLog {
    pub fn header(&self) -> Option<&RunRecord> {
        self.records.first().filter(|r| matches!(r, RunRecord::Header { .. }))
    }

    pub fn mode(&self) -> Option<RunMode> {
        match self.header()? {
            RunRecord::Header { mode, .. } => Some(*mode),
            _ => None,
        }
    }

    pub fn scenario_hash(&self) -> Option<&str> {
        match self.header()? {
            RunRecord::Header { scenario_hash, .. } => Some(scenario_hash),
            _ => None,
        }
    }

    pub fn initialization_error(&self) -> Option<&str> {
        match self.header()? {
            RunRecord::Header { initialization_error, .. } => initialization_error.as_deref(),
            _ => None,
        }
    }

    pub fn status(&self) -> Option<RunStatus> {
        self.records.iter().rev().find_map(|r| match r {
            RunRecord::End { status, .. } => Some(*status),
            _ => None,
        })
    }

    pub fn trigger_events(&self) -> Vec<TriggerEvent> {
        self.records
            .iter()
            .filter_map(|r| match r {
                RunRecord::Trigger { stamp, trigger_id, vehicle_pose_at_fire, actions_executed, .. } => Some(TriggerEvent {
                    stamp: *stamp,
                    trigger_id: trigger_id.clone(),
                    vehicle_pose_at_fire: *vehicle_pose_at_fire,
                    actions_executed: actions_executed.clone(),
                }),
                _ => None,
            })
            .collect()
    }

    pub fn trigger_ids(&self) -> Vec<String> {
        self.trigger_events().into_iter().map(|e| e.trigger_id).collect()
    }

    pub fn poses(&self) -> Vec<(Timestamp, RigidTransform)> {
        self.records
            .iter()
            .filter_map(|r| match r {
                RunRecord::Pose { stamp, pose, .. } => Some((*stamp, *pose)),
                _ => None,
            })
            .collect()
    }

    pub fn pose_trajectory(&self) -> Trajectory {
        Trajectory::new(self.poses())
    }

    pub fn estimates(&self) -> Vec<PoseEstimate> {
        self.records
            .iter()
            .filter_map(|r| match r {
                RunRecord::Estimate { estimate } => Some(*estimate),
                _ => None,
            })
            .collect()
    }

    pub fn gaps(&self) -> Vec<(Timestamp, Timestamp)> {
        self.records
            .iter()
            .filter_map(|r| match r {
                RunRecord::Gap { from, to } => Some((*from, *to)),
                _ => None,
            })
            .collect()
    }

    pub fn write_to(&self, w: impl Write) -> Result<(), HarnessError> {
        let mut w = BufWriter::new(w);
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(|e| HarnessError::Io(e.to_string()))?;
            w.write_all(b"\n").map_err(|e| HarnessError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| HarnessError::Io(e.to_string()))
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_from(r: impl Read) -> Result<RunLog, HarnessError> {
        let mut records = Vec::new();
        for (i, line) in BufReader::new(r).lines().enumerate() {
            let line = line.map_err(|e| HarnessError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RunRecord =
                serde_json::from_str(&line).map_err(|e| HarnessError::LogFormat { line: i + 1, message: e.to_string() })?;
            records.push(rec);
        }
        let log = RunLog { records };
        if log.header().is_none() {
            return Err(HarnessError::LogFormat { line: 1, message: "first record must be the header".into() });
        }
        Ok(log)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        let f = std::fs::File::create(path.as_ref()).map_err(|e| HarnessError::Io(format!("{}: {e}", path.as_ref().display())))?;
        self.write_to(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunLog, HarnessError> {
        let f = std::fs::File::open(path.as_ref()).map_err(|e| HarnessError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::read_from(f)
    }
}

//! Twinned execution: one scenario in the in-lab simulator (vehicle on
//! waypoints) and on the road (localizer on scans), plus synthetic worlds,
//! disturbance injection and run comparison.

mod compare;
mod disturbance;
mod follower;
mod log;
mod replay;
mod sensor;
mod sim;
mod trajectory;
mod world;

pub use compare::{compare_runs, TriggerComparison, TwinningReport};
pub use disturbance::{inject_scans, inject_trajectory, Disturbance};
pub use follower::{RoutePath, VehiclePhase, VehicleState, WaypointFollower, MAX_ROUTE_DEVIATION};
pub use log::{AgentSample, RunLog, RunMode, RunRecord, RunStatus};
pub use replay::{run_replay, ReplayConfig, ReplayStepper};
pub use sensor::{synthesize_scans, SensorMode, SensorModel};
pub use sim::{run_sim, OperatorCommand, SimConfig, SimStepper, TickOutput};
pub use trajectory::Trajectory;
pub use world::{synthesize_world, LoopRoad, SyntheticWorld, WorldSpec, STOP_LEAD, TRIGGER_LEAD};

use crate::frames::Timestamp;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("vehicle left the route by {deviation:.2} m at t = {:.2} s", stamp.as_secs_f64())]
    RouteUnreachable { stamp: Timestamp, deviation: f64 },
    #[error("runs belong to different scenarios ({a} vs {b})")]
    ScenarioMismatch { a: String, b: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("run log line {line}: {message}")]
    LogFormat { line: usize, message: String },
}

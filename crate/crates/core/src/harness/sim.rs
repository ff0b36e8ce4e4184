//! In-lab twin: the scenario driven by a simulated vehicle on the route.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::disturbance::Disturbance;
use super::follower::{RoutePath, VehiclePhase, VehicleState, WaypointFollower};
use super::log::{AgentSample, RunLog, RunMode, RunRecord, RunStatus};
use super::HarnessError;
use crate::frames::{RigidTransform, Timestamp, NANOS_PER_SEC};
use crate::scenario::{RunSnapshot, Scenario, ScenarioRun, TriggerEvent};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub follower: WaypointFollower,
    /// Stops wait for an operator proceed command instead of a timer.
    pub operator_holds: bool,
    pub disturbances: Vec<Disturbance>,
    /// Safety stop, seconds of simulated time.
    pub max_duration: f64,
    pub agent_sample_period: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.02,
            follower: WaypointFollower::default(),
            operator_holds: false,
            disturbances: Vec::new(),
            max_duration: 3600.0,
            agent_sample_period: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorCommand {
    Pause,
    Resume,
    /// Releases a vehicle holding at a stop.
    Proceed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TickOutput {
    pub stamp: Timestamp,
    pub pose: RigidTransform,
    pub events: Vec<TriggerEvent>,
    pub phase: VehiclePhase,
    pub paused: bool,
}

pub(crate) fn agent_samples(run: &ScenarioRun, vehicle: &RigidTransform) -> Vec<AgentSample> {
    let visible = run.visible(vehicle);
    run.agents()
        .iter()
        .map(|a| AgentSample {
            id: a.id.clone(),
            position: a.position(),
            yaw: a.pose.yaw(),
            active: a.active,
            visible: visible.contains(&a.id),
        })
        .collect()
}

pub(crate) fn trigger_record(e: &TriggerEvent, run: &ScenarioRun) -> RunRecord {
    RunRecord::Trigger {
        stamp: e.stamp,
        trigger_id: e.trigger_id.clone(),
        vehicle_pose_at_fire: e.vehicle_pose_at_fire,
        actions_executed: e.actions_executed.clone(),
        agents: agent_samples(run, &e.vehicle_pose_at_fire),
    }
}

/// Tick-by-tick simulation. Commands queue up and apply at the next tick.
pub struct SimStepper {
    path: RoutePath,
    cfg: SimConfig,
    run: ScenarioRun,
    vehicle: VehicleState,
    tick: u64,
    dt_nanos: u64,
    agent_every: u64,
    pause_windows: Vec<(u64, u64)>,
    operator_paused: bool,
    commands: VecDeque<OperatorCommand>,
    log: RunLog,
    status: Option<RunStatus>,
}

impl SimStepper {
    pub fn new(scenario: &Scenario, cfg: SimConfig) -> Result<SimStepper, HarnessError> {
        if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
            return Err(HarnessError::InvalidInput("dt must be positive".into()));
        }
        cfg.follower.validate().map_err(HarnessError::InvalidInput)?;
        for d in &cfg.disturbances {
            d.validate().map_err(HarnessError::InvalidInput)?;
        }
        let path = RoutePath::new(&scenario.route).map_err(HarnessError::InvalidInput)?;
        let ticks = |secs: f64| (secs / cfg.dt).round() as u64;
        let pause_windows = cfg
            .disturbances
            .iter()
            .filter_map(|d| match d {
                Disturbance::Pause { start, duration } => Some((ticks(*start), ticks(*start) + ticks(*duration))),
                _ => None,
            })
            .collect();
        let mut log = RunLog::default();
        log.records.push(RunRecord::Header {
            mode: RunMode::Sim,
            scenario_hash: scenario.content_hash(),
            map_hash: None,
            seed: cfg.seed,
            config: serde_json::to_value(&cfg).expect("config serializes"),
            initialization_error: None,
        });
        for d in &cfg.disturbances {
            log.records.push(RunRecord::Disturbance { disturbance: d.clone() });
        }
        let vehicle = cfg.follower.start(&path);
        Ok(SimStepper {
            dt_nanos: (cfg.dt * NANOS_PER_SEC as f64).round() as u64,
            agent_every: ((cfg.agent_sample_period / cfg.dt).round() as u64).max(1),
            run: ScenarioRun::new(Arc::new(scenario.clone())),
            path,
            vehicle,
            tick: 0,
            pause_windows,
            operator_paused: false,
            commands: VecDeque::new(),
            log,
            status: None,
            cfg,
        })
    }

    pub fn push_command(&mut self, c: OperatorCommand) {
        self.commands.push_back(c);
    }

    pub fn stamp(&self) -> Timestamp {
        Timestamp(self.tick * self.dt_nanos)
    }

    pub fn vehicle(&self) -> &VehicleState {
        &self.vehicle
    }

    pub fn run(&self) -> &ScenarioRun {
        &self.run
    }

    pub fn status(&self) -> Option<RunStatus> {
        self.status
    }

    pub fn is_paused(&self) -> bool {
        self.operator_paused || self.pause_windows.iter().any(|&(a, b)| (a..b).contains(&self.tick))
    }

    pub fn snapshot(&self) -> RunSnapshot {
        self.run.snapshot()
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn into_log(self) -> RunLog {
        self.log
    }

    /// Stops the run early, closing the log.
    pub fn stop(&mut self) {
        if self.status.is_none() {
            self.finish(RunStatus::Stopped, Some("stopped by operator".into()));
        }
    }

    fn finish(&mut self, status: RunStatus, detail: Option<String>) {
        self.status = Some(status);
        self.log.records.push(RunRecord::End { stamp: self.stamp(), status, detail });
    }

    /// Evaluates triggers at the current pose, logs, then advances one tick.
    pub fn step(&mut self) -> Result<TickOutput, HarnessError> {
        while let Some(c) = self.commands.pop_front() {
            match c {
                OperatorCommand::Pause => self.operator_paused = true,
                OperatorCommand::Resume => self.operator_paused = false,
                OperatorCommand::Proceed => self.cfg.follower.proceed(&mut self.vehicle),
            }
        }
        let stamp = self.stamp();
        let pose = self.vehicle.pose();
        let paused = self.is_paused();
        if self.status.is_some() {
            return Ok(TickOutput { stamp, pose, events: Vec::new(), phase: self.vehicle.phase, paused });
        }

        let events = self.run.trigger_step(&pose, stamp);
        self.log.records.push(RunRecord::Pose { stamp, pose, speed: Some(self.vehicle.speed) });
        for e in &events {
            let rec = trigger_record(e, &self.run);
            self.log.records.push(rec);
        }
        if self.tick % self.agent_every == 0 {
            self.log.records.push(RunRecord::Agents { stamp, agents: agent_samples(&self.run, &pose) });
        }

        if self.vehicle.phase == VehiclePhase::Finished {
            self.finish(RunStatus::Completed, None);
            return Ok(TickOutput { stamp, pose, events, phase: self.vehicle.phase, paused });
        }
        if stamp.seconds_since(Timestamp(0)) >= self.cfg.max_duration {
            self.finish(RunStatus::Stopped, Some("maximum duration reached".into()));
            return Ok(TickOutput { stamp, pose, events, phase: self.vehicle.phase, paused });
        }

        self.run.agent_step(self.cfg.dt);
        if !paused {
            if let Err(dev) = self.cfg.follower.step(&self.path, &mut self.vehicle, self.cfg.dt, self.cfg.operator_holds) {
                self.finish(RunStatus::RouteUnreachable, Some(format!("deviation {:.2} m", dev.0)));
                return Err(HarnessError::RouteUnreachable { stamp, deviation: dev.0 });
            }
        }
        self.tick += 1;
        Ok(TickOutput { stamp, pose, events, phase: self.vehicle.phase, paused })
    }
}

/// Drives the route to its end with timed holds at stops.
pub fn run_sim(scenario: &Scenario, cfg: &SimConfig) -> Result<RunLog, HarnessError> {
    let mut sim = SimStepper::new(scenario, SimConfig { operator_holds: false, ..cfg.clone() })?;
    while sim.status().is_none() {
        sim.step()?;
    }
    Ok(sim.into_log())
}

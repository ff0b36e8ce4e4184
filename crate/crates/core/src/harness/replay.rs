//! On-road twin: the scenario driven by the localizer running on scans.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::disturbance::Disturbance;
use super::log::{RunLog, RunMode, RunRecord, RunStatus};
use super::sim::{agent_samples, trigger_record};
use super::HarnessError;
use crate::frames::{RigidTransform, Timestamp, NANOS_PER_SEC};
use crate::localization::{initialize, Localizer, LocalizerConfig, PoseEstimate, StampedScan, YawSearch};
use crate::pointcloud::PointCloudMap;
use crate::scenario::{RunSnapshot, Scenario, ScenarioRun, TriggerEvent};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    pub localizer: LocalizerConfig,
    /// Trigger evaluation rate; poses between scans are predicted.
    pub tick_hz: f64,
    pub yaw_search: Option<YawSearch>,
    pub agent_sample_period: f64,
    pub seed: u64,
    /// Recorded in the log; the caller applies them to the scan stream.
    pub disturbances: Vec<Disturbance>,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            localizer: LocalizerConfig::default(),
            tick_hz: 50.0,
            yaw_search: None,
            agent_sample_period: 0.5,
            seed: 0,
            disturbances: Vec::new(),
        }
    }
}

/// Tick-by-tick replay over borrowed scans and map.
pub struct ReplayStepper<'a> {
    map: &'a PointCloudMap,
    scans: &'a [StampedScan],
    localizer: Option<Localizer>,
    run: ScenarioRun,
    first: Timestamp,
    last: Timestamp,
    tick_nanos: u64,
    dt: f64,
    nominal: u64,
    agent_every: u64,
    next: usize,
    k: u64,
    log: RunLog,
    status: Option<RunStatus>,
}

impl<'a> ReplayStepper<'a> {
    /// Initializes the localizer on the first scan. Failure is not an error:
    /// the stepper comes back finished, with the reason in the log header.
    pub fn new(
        scenario: &Scenario,
        map: &'a PointCloudMap,
        scans: &'a [StampedScan],
        initial_pose: &RigidTransform,
        cfg: &ReplayConfig,
    ) -> Result<ReplayStepper<'a>, HarnessError> {
        if !(cfg.tick_hz > 0.0 && cfg.tick_hz.is_finite()) {
            return Err(HarnessError::InvalidInput("tick_hz must be positive".into()));
        }
        if scans.windows(2).any(|w| w[1].stamp <= w[0].stamp) {
            return Err(HarnessError::InvalidInput("scan stamps must increase".into()));
        }
        let Some(first) = scans.first() else {
            return Err(HarnessError::InvalidInput("no scans to replay".into()));
        };

        let init = initialize(initial_pose, cfg.yaw_search, &first.cloud, first.stamp, map, &cfg.localizer);
        let mut log = RunLog::default();
        log.records.push(RunRecord::Header {
            mode: RunMode::Replay,
            scenario_hash: scenario.content_hash(),
            map_hash: Some(map.hash().to_string()),
            seed: cfg.seed,
            config: serde_json::to_value(cfg).expect("config serializes"),
            initialization_error: init.as_ref().err().map(|e| e.to_string()),
        });
        for d in &cfg.disturbances {
            log.records.push(RunRecord::Disturbance { disturbance: d.clone() });
        }
        let mut status = None;
        let localizer = match init {
            Ok(state) => {
                log.records.push(RunRecord::Estimate {
                    estimate: PoseEstimate {
                        stamp: first.stamp,
                        map_to_vehicle: state.pose,
                        fitness: 0.0,
                        iterations_used: 0,
                        converged: true,
                    },
                });
                Some(Localizer::new(state, cfg.localizer.clone()))
            }
            Err(e) => {
                log.records.push(RunRecord::End {
                    stamp: first.stamp,
                    status: RunStatus::InitializationFailed,
                    detail: Some(e.to_string()),
                });
                status = Some(RunStatus::InitializationFailed);
                None
            }
        };
        let tick_nanos = (NANOS_PER_SEC as f64 / cfg.tick_hz).round() as u64;
        let dt = tick_nanos as f64 / NANOS_PER_SEC as f64;
        Ok(ReplayStepper {
            map,
            scans,
            localizer,
            run: ScenarioRun::new(Arc::new(scenario.clone())),
            first: first.stamp,
            last: scans.last().unwrap().stamp,
            tick_nanos,
            dt,
            nominal: nominal_period(scans),
            agent_every: ((cfg.agent_sample_period / dt).round() as u64).max(1),
            next: 1,
            k: 0,
            log,
            status,
        })
    }

    pub fn stamp(&self) -> Timestamp {
        Timestamp(self.first.0 + self.k * self.tick_nanos)
    }

    pub fn status(&self) -> Option<RunStatus> {
        self.status
    }

    pub fn run(&self) -> &ScenarioRun {
        &self.run
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

    pub fn stop(&mut self) {
        if self.status.is_none() {
            self.status = Some(RunStatus::Stopped);
            self.log.records.push(RunRecord::End { stamp: self.stamp(), status: RunStatus::Stopped, detail: Some("stopped".into()) });
        }
    }

    /// Consumes scans up to the tick stamp, then evaluates triggers on the
    /// predicted pose.
    pub fn step(&mut self) -> Vec<TriggerEvent> {
        let Some(localizer) = self.localizer.as_mut().filter(|_| self.status.is_none()) else {
            return Vec::new();
        };
        let t = Timestamp(self.first.0 + self.k * self.tick_nanos);
        let scans = self.scans;
        while self.next < scans.len() && scans[self.next].stamp <= t {
            let prev = scans[self.next - 1].stamp;
            let cur = &scans[self.next];
            if self.nominal > 0 && cur.stamp.0 - prev.0 > self.nominal + self.nominal / 2 {
                self.log.records.push(RunRecord::Gap { from: prev, to: cur.stamp });
            }
            let est = localizer.update(&cur.cloud, cur.stamp, self.map);
            self.log.records.push(RunRecord::Estimate { estimate: est });
            self.next += 1;
        }
        let pose = localizer.predict(t);
        let events = self.run.trigger_step(&pose, t);
        self.log.records.push(RunRecord::Pose { stamp: t, pose, speed: None });
        for e in &events {
            let rec = trigger_record(e, &self.run);
            self.log.records.push(rec);
        }
        if self.k % self.agent_every == 0 {
            self.log.records.push(RunRecord::Agents { stamp: t, agents: agent_samples(&self.run, &pose) });
        }
        if t >= self.last {
            self.status = Some(RunStatus::Completed);
            self.log.records.push(RunRecord::End { stamp: t, status: RunStatus::Completed, detail: None });
        } else {
            self.run.agent_step(self.dt);
            self.k += 1;
        }
        events
    }
}

/// Localizes every scan, evaluates triggers on predicted poses at `tick_hz`,
/// and logs estimates, events and gaps. Initialization failure is reported
/// in the log header rather than as an error.
pub fn run_replay(
    scenario: &Scenario,
    map: &PointCloudMap,
    scans: &[StampedScan],
    initial_pose: &RigidTransform,
    cfg: &ReplayConfig,
) -> Result<RunLog, HarnessError> {
    let mut stepper = ReplayStepper::new(scenario, map, scans, initial_pose, cfg)?;
    while stepper.status().is_none() {
        stepper.step();
    }
    Ok(stepper.into_log())
}

/// Median spacing between consecutive scans, nanoseconds.
fn nominal_period(scans: &[StampedScan]) -> u64 {
    let mut d: Vec<u64> = scans.windows(2).map(|w| w[1].stamp.0 - w[0].stamp.0).collect();
    if d.is_empty() {
        return 0;
    }
    d.sort_unstable();
    d[d.len() / 2]
}

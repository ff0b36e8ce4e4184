use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::json;

use super::{exit, Cli, CliError, DemoArgs, MapBuildArgs, Mode, RunArgs, TwinArgs, ValidateArgs};
use crate::bridge::{resolve_port, BridgeConfig, BridgePublisher, BridgeServer};
use crate::frames::{RigidTransform, Timestamp};
use crate::harness::{
    compare_runs, inject_scans, inject_trajectory, synthesize_scans, synthesize_world, Disturbance, HarnessError,
    ReplayConfig, ReplayStepper, RunLog, RunStatus, SensorModel, SimConfig, SimStepper, WorldSpec,
};
use crate::localization::{load_scans, save_scans, YawSearch};
use crate::pointcloud::{build_map_from_scans, load_cloud, save_cloud, CloudIoError, MapBuildConfig, MapBuildError, PointCloudMap};
use crate::scenario::{parse_scenario, serialize_scenario, validate_against_map, Scenario, ScenarioError};

/// Writes to stdout, tolerating a closed pipe.
pub(crate) fn print_json(v: &serde_json::Value) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(v).expect("JSON value serializes"));
}

fn cloud_err(path: &Path, e: CloudIoError) -> CliError {
    let code = if e.is_format() { exit::FORMAT } else { exit::FAILURE };
    CliError::new(code, format!("{}: {e}", path.display()))
}

pub(crate) fn load_map(path: &Path) -> Result<PointCloudMap, CliError> {
    load_cloud(path).map(PointCloudMap::new).map_err(|e| cloud_err(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::new(exit::FAILURE, format!("{}: {e}", path.display())))
}

fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    parse_scenario(&read_text(path)?).map_err(|e| CliError::new(exit::VALIDATION, format!("{}: {e}", path.display())))
}

fn load_disturbances(path: Option<&PathBuf>) -> Result<Vec<Disturbance>, CliError> {
    let Some(path) = path else { return Ok(Vec::new()) };
    let list: Vec<Disturbance> = serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::new(exit::FORMAT, format!("{}: {e}", path.display())))?;
    for d in &list {
        d.validate().map_err(|e| CliError::new(exit::USAGE, format!("{}: {e}", path.display())))?;
    }
    Ok(list)
}

/// `"x y z yaw"` → map→vehicle pose.
pub fn parse_init_pose(s: &str) -> Result<RigidTransform, String> {
    let v: Vec<f64> = s
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("{t:?} is not a number")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, z, yaw] if v.iter().all(|c| c.is_finite()) => Ok(RigidTransform::from_xyz_yaw(x, y, z, yaw)),
        _ => Err(format!("expected \"x y z yaw\", got {s:?}")),
    }
}

/// `"span step"` in radians.
pub fn parse_yaw_search(s: &str) -> Result<YawSearch, String> {
    let v: Vec<f64> = s
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("{t:?} is not a number")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [span, step] if span >= 0.0 && step > 0.0 && span.is_finite() => Ok(YawSearch { span, step }),
        _ => Err(format!("expected \"span step\" with step > 0, got {s:?}")),
    }
}

pub fn map_build(a: &MapBuildArgs) -> Result<i32, CliError> {
    let cfg = MapBuildConfig { voxel_size: a.voxel, keyframe_distance: a.keyframe_dist, ..Default::default() };
    cfg.validate().map_err(|e| CliError::new(exit::USAGE, e))?;
    let scans = load_scans(&a.scans).map_err(|e| cloud_err(&a.scans, e))?;
    let built = build_map_from_scans(&scans, &cfg).map_err(|e| match e {
        MapBuildError::RegistrationDiverged { .. } => CliError::new(exit::DIVERGED, e.to_string()),
        MapBuildError::InvalidConfig(_) => CliError::new(exit::USAGE, e.to_string()),
        _ => CliError::new(exit::FORMAT, e.to_string()),
    })?;
    save_cloud(built.map.cloud(), &a.out).map_err(|e| cloud_err(&a.out, e))?;

    let sidecar = trajectory_sidecar(&a.out);
    let trajectory: Vec<_> = scans
        .iter()
        .zip(&built.poses)
        .enumerate()
        .map(|(k, (s, p))| json!({ "stamp": s.stamp, "pose": p, "keyframe": built.keyframes.binary_search(&k).is_ok() }))
        .collect();
    let text = serde_json::to_string_pretty(&json!({ "trajectory": trajectory })).expect("JSON");
    std::fs::write(&sidecar, text).map_err(|e| CliError::new(exit::FAILURE, format!("{}: {e}", sidecar.display())))?;

    print_json(&json!({
        "map": a.out,
        "trajectory": sidecar,
        "points": built.map.len(),
        "keyframes": built.keyframes.len(),
        "scans": scans.len(),
        "sha256": built.map.hash(),
    }));
    Ok(exit::OK)
}

/// `world.pmap` → `world.traj.json`.
pub fn trajectory_sidecar(map: &Path) -> PathBuf {
    map.with_extension("traj.json")
}

pub fn scenario_validate(a: &ValidateArgs) -> Result<i32, CliError> {
    let map = load_map(&a.map)?;
    let text = read_text(&a.scenario)?;
    let scenario = match parse_scenario(&text) {
        Ok(s) => s,
        Err(e) => {
            let (kind, entity) = match &e {
                ScenarioError::Schema { path, .. } => ("schema", path.clone()),
                ScenarioError::DanglingReference(id) => ("dangling_reference", id.clone()),
                ScenarioError::DuplicateId(id) => ("duplicate_id", id.clone()),
            };
            print_json(&json!({
                "valid": false,
                "issues": [{ "severity": "error", "kind": kind, "entity": entity, "message": e.to_string() }],
            }));
            return Ok(exit::VALIDATION);
        }
    };
    let report = validate_against_map(&scenario, &map);
    print_json(&json!({ "valid": !report.has_errors(), "issues": report.issues }));
    Ok(if report.has_errors() { exit::VALIDATION } else { exit::OK })
}

enum Stepper<'a> {
    Sim(SimStepper),
    Replay(ReplayStepper<'a>),
}

pub fn run(cli: &Cli, a: &RunArgs) -> Result<i32, CliError> {
    // mode-specific inputs are checked before any file is read
    let (init_pose, yaw_search) = match a.mode {
        Mode::Replay => {
            if a.scans.is_none() {
                return Err(CliError::new(exit::USAGE, "--mode replay requires --scans"));
            }
            let Some(pose) = &a.init_pose else {
                return Err(CliError::new(exit::USAGE, "--mode replay requires --init-pose \"x y z yaw\""));
            };
            let pose = parse_init_pose(pose).map_err(|e| CliError::new(exit::USAGE, format!("--init-pose: {e}")))?;
            let search = a
                .yaw_search
                .as_deref()
                .map(parse_yaw_search)
                .transpose()
                .map_err(|e| CliError::new(exit::USAGE, format!("--yaw-search: {e}")))?;
            (Some(pose), search)
        }
        Mode::Sim => (None, None),
    };
    if let Some(d) = a.max_duration {
        if !(d > 0.0) {
            return Err(CliError::new(exit::USAGE, "--max-duration must be positive"));
        }
    }
    let port = if a.publish { Some(resolve_port(cli.port).map_err(|e| CliError::new(exit::USAGE, e))?) } else { None };

    let scenario = load_scenario(&a.scenario)?;
    let map = load_map(&a.map)?;
    if let Some(expected) = &scenario.map_ref.sha256 {
        if !expected.eq_ignore_ascii_case(map.hash()) {
            log::warn!("scenario expects map {expected}, loaded {}", map.hash());
        }
    }
    let disturbances = load_disturbances(a.disturbances.as_ref())?;

    let server = match port {
        Some(p) => {
            let server = BridgeServer::bind(("0.0.0.0", p), BridgeConfig::default())
                .map_err(|e| CliError::new(exit::BIND, e.to_string()))?;
            server.publisher().set_map(map.cloud().points.iter().map(|p| p.xyz()).collect());
            Some(server)
        }
        None => None,
    };

    let scans = match (&a.scans, a.mode) {
        (Some(path), Mode::Replay) => {
            let raw = load_scans(path).map_err(|e| cloud_err(path, e))?;
            inject_scans(&raw, &disturbances)
        }
        _ => Vec::new(),
    };
    let mut stepper = match a.mode {
        Mode::Sim => {
            let mut cfg = SimConfig { seed: cli.seed, disturbances: disturbances.clone(), ..Default::default() };
            if let Some(d) = a.max_duration {
                cfg.max_duration = d;
            }
            Stepper::Sim(SimStepper::new(&scenario, cfg).map_err(|e| CliError::new(exit::USAGE, e.to_string()))?)
        }
        Mode::Replay => {
            let cfg = ReplayConfig { seed: cli.seed, yaw_search, disturbances, ..Default::default() };
            let s = ReplayStepper::new(&scenario, &map, &scans, &init_pose.unwrap(), &cfg)
                .map_err(|e| CliError::new(exit::FORMAT, e.to_string()))?;
            Stepper::Replay(s)
        }
    };

    let publisher = server.as_ref().map(|s| s.publisher());
    if let Some(p) = &publisher {
        if a.wait_clients > 0 {
            eprintln!("waiting for {} bridge client(s) on port {}", a.wait_clients, server.as_ref().unwrap().local_addr().port());
            while p.subscribed_count() < a.wait_clients {
                thread::sleep(Duration::from_millis(20));
            }
        }
    }
    let outcome = drive(&mut stepper, publisher.as_ref(), a.max_duration);
    if server.is_some() {
        // let the writers flush the final trigger events
        thread::sleep(Duration::from_millis(300));
    }
    drop(server);

    let log = match stepper {
        Stepper::Sim(s) => s.into_log(),
        Stepper::Replay(s) => s.into_log(),
    };
    log.save(&a.log).map_err(|e| CliError::new(exit::FAILURE, e.to_string()))?;
    let status = log.status();
    print_json(&json!({
        "log": a.log,
        "status": status,
        "triggers": log.trigger_ids(),
        "initialization_error": log.initialization_error(),
    }));
    match (outcome, status) {
        (Err(HarnessError::RouteUnreachable { .. }), _) | (_, Some(RunStatus::RouteUnreachable)) => {
            eprintln!("error: route unreachable");
            Ok(exit::ROUTE_UNREACHABLE)
        }
        (_, Some(RunStatus::InitializationFailed)) => {
            eprintln!("error: {}", log.initialization_error().unwrap_or("initialization failed"));
            Ok(exit::INIT_FAILED)
        }
        (Err(e), _) => Err(CliError::new(exit::FAILURE, e.to_string())),
        (Ok(()), _) => Ok(exit::OK),
    }
}

/// Steps to completion. With a publisher, paces ticks to wall-clock time.
fn drive(stepper: &mut Stepper<'_>, publisher: Option<&BridgePublisher>, max_duration: Option<f64>) -> Result<(), HarnessError> {
    let wall0 = Instant::now();
    let mut run0: Option<Timestamp> = None;
    loop {
        let (stamp, events, snapshot, done) = match stepper {
            Stepper::Sim(s) => {
                if s.status().is_some() {
                    return Ok(());
                }
                let out = s.step()?;
                (out.stamp, out.events, s.snapshot(), s.status().is_some())
            }
            Stepper::Replay(s) => {
                if s.status().is_some() {
                    return Ok(());
                }
                let stamp = s.stamp();
                let events = s.step();
                (stamp, events, s.snapshot(), s.status().is_some())
            }
        };
        let start = *run0.get_or_insert(stamp);
        let elapsed = stamp.seconds_since(start);
        if let Some(p) = publisher {
            p.update_from_run(&snapshot);
            for e in &events {
                p.trigger_fired(&e.trigger_id, e.stamp, &e.vehicle_pose_at_fire);
            }
            let due = wall0 + Duration::from_secs_f64(elapsed.max(0.0));
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                thread::sleep(wait);
            }
        }
        if done {
            return Ok(());
        }
        if max_duration.is_some_and(|m| elapsed >= m) {
            match stepper {
                Stepper::Sim(s) => s.stop(),
                Stepper::Replay(s) => s.stop(),
            }
            return Ok(());
        }
    }
}

pub fn twin_report(a: &TwinArgs) -> Result<i32, CliError> {
    let load = |p: &Path| RunLog::load(p).map_err(|e| CliError::new(exit::FORMAT, format!("{}: {e}", p.display())));
    let (la, lb) = (load(&a.a)?, load(&a.b)?);
    match compare_runs(&la, &lb) {
        Ok(report) => {
            print_json(&serde_json::to_value(&report).expect("report serializes"));
            eprintln!(
                "{} triggers compared; max firing-position distance {:.3} m; max |time offset| {:.3} s",
                report.triggers.len(),
                report.max_position_distance,
                report.max_abs_time_offset
            );
            Ok(if report.sequences_equal { exit::OK } else { exit::SEQUENCES_DIFFER })
        }
        Err(e @ HarnessError::ScenarioMismatch { .. }) => Err(CliError::new(exit::SCENARIO_MISMATCH, e.to_string())),
        Err(e) => Err(CliError::new(exit::FAILURE, e.to_string())),
    }
}

pub fn demo(cli: &Cli, a: &DemoArgs) -> Result<i32, CliError> {
    let spec = WorldSpec { route_length: a.route_length, crosswalks: a.crosswalks, seed: cli.seed, ..WorldSpec::demo() };
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        return Err(CliError::new(exit::USAGE, "--noise must be non-negative"));
    }
    let disturbances = load_disturbances(a.disturbances.as_ref())?;
    let (world, scenario) = synthesize_world(&spec).map_err(|e| CliError::new(exit::USAGE, e.to_string()))?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::new(exit::FAILURE, format!("{}: {e}", a.out.display())))?;

    let map_path = a.out.join("world.pmap");
    save_cloud(world.map.cloud(), &map_path).map_err(|e| cloud_err(&map_path, e))?;
    let scenario_path = a.out.join("scenario.json");
    std::fs::write(&scenario_path, serialize_scenario(&scenario))
        .map_err(|e| CliError::new(exit::FAILURE, format!("{}: {e}", scenario_path.display())))?;

    let drive = inject_trajectory(&world.ground_truth, &disturbances);
    let sensor = SensorModel { noise_sigma: a.noise, seed: cli.seed, ..Default::default() };
    let scans = inject_scans(&synthesize_scans(&world.map, &drive, &sensor), &disturbances);
    let scans_path = a.out.join("scans.pscan");
    save_scans(&scans, &scans_path).map_err(|e| cloud_err(&scans_path, e))?;

    let start = drive.samples()[0].1;
    let t = start.translation_array();
    print_json(&json!({
        "map": map_path,
        "scenario": scenario_path,
        "scans": scans_path,
        "map_points": world.map.len(),
        "scan_count": scans.len(),
        "crosswalks": scenario.triggers.len(),
        "drive_seconds": drive.duration(),
        "init_pose": format!("{} {} {} {}", t[0], t[1], t[2], start.yaw()),
    }));
    Ok(exit::OK)
}

//! Exit codes and stdout contracts of the `portobello` binary.

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use serde_json::{json, Value};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use portobello::frames::{RigidTransform, Timestamp};
use portobello::harness::{RunLog, SensorModel};
use portobello::localization::{encode_scans, StampedScan};
use portobello::pointcloud::{save_cloud, Point, PointCloud, PointCloudMap};

const BIN: &str = env!("CARGO_BIN_EXE_portobello");

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Out {
    fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", self.stdout))
    }
}

fn run(args: &[&str]) -> Out {
    let o = Command::new(BIN).args(args).env_remove("PORTOBELLO_PORT").output().unwrap();
    Out {
        code: o.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small demo world (two crosswalks), generated once per test binary.
struct Demo {
    dir: PathBuf,
    init_pose: String,
    scenario: String,
    map: String,
    scans: String,
}

impl Demo {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

fn demo() -> &'static Demo {
    static DEMO: OnceLock<Demo> = OnceLock::new();
    DEMO.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-demo");
        let _ = std::fs::remove_dir_all(&dir);
        let o = run(&["demo", "--out", s(&dir), "--route-length", "120", "--crosswalks", "2"]);
        assert_eq!(o.code, 0, "{}", o.stderr);
        let v = o.json();
        assert_eq!(v["crosswalks"], 2);
        let file = |name: &str| s(&dir.join(name)).to_string();
        let (scenario, map, scans) = (file("scenario.json"), file("world.pmap"), file("scans.pscan"));
        Demo { dir, init_pose: v["init_pose"].as_str().unwrap().into(), scenario, map, scans }
    })
}

fn sim_log(name: &str, extra: &[&str]) -> PathBuf {
    let d = demo();
    let log = d.path(name);
    let mut args = vec!["run", "--scenario", &d.scenario, "--map", &d.map, "--mode", "sim"];
    args.extend_from_slice(extra);
    args.extend_from_slice(&["--log", s(&log)]);
    let o = run(&args);
    assert_eq!(o.code, 0, "{}", o.stderr);
    log
}

/// Floor and two walls around the origin, 40 m x 20 m.
fn write_box_map(path: &Path) {
    let mut pts = Vec::new();
    for i in 0..200 {
        for j in 0..100 {
            pts.push(Point::new(i as f64 * 0.2, j as f64 * 0.2 - 10.0, 0.0));
        }
        for k in 0..15 {
            pts.push(Point::new(i as f64 * 0.2, 10.0, k as f64 * 0.2));
        }
    }
    save_cloud(&PointCloud::from_points("map", pts), path).unwrap();
}

fn scenario_doc(map: &str) -> Value {
    json!({
        "portobello_scenario": 1,
        "map_ref": {"path": map},
        "agents": [{
            "id": "ped",
            "kind": "pedestrian",
            "initial_pose": {"translation": [20, -5, 0], "rotation": [1, 0, 0, 0]},
            "path": [{"waypoint": [20, 5, 0], "speed": 1.4}]
        }],
        "triggers": [{"id": "gate", "shape": {"box": {"center": [15, 0, 0], "half_extents": [1, 3, 2]}}}],
        "bindings": [{"trigger_id": "gate", "actions": [{"start_agent": "ped"}]}],
        "route": [
            {"position": [2, 0, 0], "target_speed": 4.0},
            {"position": [35, 0, 0], "target_speed": 4.0}
        ]
    })
}

/// Scans 0.5 m apart down a walled corridor with pillars, dense enough to map.
fn corridor_scans(n: usize) -> Vec<StampedScan> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut pts = Vec::new();
    for _ in 0..40_000 {
        pts.push(Point::new(rng.gen_range(-10.0..40.0), rng.gen_range(-3.0..3.0), 0.0));
    }
    for side in [-3.0, 3.0] {
        for _ in 0..25_000 {
            pts.push(Point::new(rng.gen_range(-10.0..40.0), side, rng.gen_range(0.0..3.0)));
        }
    }
    let mut x = -9.0;
    while x < 39.0 {
        let side = if rng.gen_bool(0.5) { -2.7 } else { 2.7 };
        for _ in 0..600 {
            pts.push(Point::new(x + rng.gen_range(0.0..0.5), side + rng.gen_range(-0.3..0.3), rng.gen_range(0.0..3.0)));
        }
        x += rng.gen_range(2.0..5.0);
    }
    let world = PointCloudMap::new(PointCloud::from_points("map", pts));
    let sensor = SensorModel { max_range: 20.0, ..SensorModel::default() };
    (0..n)
        .map(|k| StampedScan {
            stamp: Timestamp::from_millis(500 * k as u64),
            cloud: sensor.scan(&world, &RigidTransform::from_translation(0.5 * k as f64, 0.0, 0.0), k as u64),
        })
        .collect()
}

#[test]
fn help_version_and_usage_errors() {
    assert_eq!(run(&["--help"]).code, 0);
    assert_eq!(run(&["--version"]).code, 0);
    assert_eq!(run(&[]).code, 64);
    assert_eq!(run(&["frobnicate"]).code, 64);
    assert_eq!(run(&["map-build", "--scans", "x.pscan"]).code, 64);
    assert_eq!(run(&["run", "--scenario", "a", "--map", "b", "--mode", "warp", "--log", "c"]).code, 64);
}

#[test]
fn scenario_validate_codes() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("box.pmap");
    write_box_map(&map);
    let sc = dir.path().join("s.json");
    let check = |doc: &Value| {
        std::fs::write(&sc, serde_json::to_string_pretty(doc).unwrap()).unwrap();
        run(&["scenario-validate", "--scenario", s(&sc), "--map", s(&map)])
    };

    let good = scenario_doc("box.pmap");
    let o = check(&good);
    assert_eq!(o.code, 0, "{}{}", o.stdout, o.stderr);
    assert_eq!(o.json()["valid"], true);

    let mut dangling = good.clone();
    dangling["bindings"][0]["actions"][0]["start_agent"] = json!("ghost");
    let o = check(&dangling);
    assert_eq!(o.code, 4);
    assert!(o.stdout.contains("ghost") || o.stderr.contains("ghost"), "{}{}", o.stdout, o.stderr);

    let mut far = good.clone();
    far["triggers"][0]["shape"]["box"]["center"] = json!([500, 0, 0]);
    let o = check(&far);
    assert_eq!(o.code, 4);
    let v = o.json();
    assert_eq!(v["valid"], false);
    assert!(v["issues"].as_array().unwrap().iter().any(|i| i["entity"] == "triggers[gate]"), "{v}");

    let mut unknown = good.clone();
    unknown["agents"][0]["colour"] = json!("red");
    assert_eq!(check(&unknown).code, 4);

    let o = run(&["scenario-validate", "--scenario", s(&sc), "--map", s(&dir.path().join("missing.pmap"))]);
    assert_eq!(o.code, 1, "{}", o.stderr);
    std::fs::write(dir.path().join("bad.pmap"), "portobello-map v1\ncount 3\n").unwrap();
    assert_eq!(run(&["scenario-validate", "--scenario", s(&sc), "--map", s(&dir.path().join("bad.pmap"))]).code, 2);
}

#[test]
fn map_build_outputs_and_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rebuilt.pmap");
    let few = corridor_scans(30);
    let scan_path = dir.path().join("few.pscan");
    std::fs::write(&scan_path, encode_scans(&few)).unwrap();
    let o = run(&["map-build", "--scans", s(&scan_path), "--out", s(&out)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let v = o.json();
    assert!(v["points"].as_u64().unwrap() > 0);
    assert_eq!(v["scans"], 30);
    assert!(v["keyframes"].as_u64().unwrap() >= 2);
    assert_eq!(v["sha256"].as_str().unwrap().len(), 64);
    let traj: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("rebuilt.traj.json")).unwrap()).unwrap();
    assert_eq!(traj["trajectory"].as_array().unwrap().len(), 30);
    assert!(portobello::pointcloud::load_cloud(&out).unwrap().len() as u64 == v["points"].as_u64().unwrap());

    let mut bytes = encode_scans(&few[..3]);
    bytes.truncate(bytes.len() - 5);
    let bad = dir.path().join("bad.pscan");
    std::fs::write(&bad, bytes).unwrap();
    let o = run(&["map-build", "--scans", s(&bad), "--out", s(&dir.path().join("x.pmap"))]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("offset"), "{}", o.stderr);

    let empty = vec![StampedScan { stamp: Timestamp(0), cloud: PointCloud::new("vehicle") }];
    std::fs::write(&bad, encode_scans(&empty)).unwrap();
    assert_ne!(run(&["map-build", "--scans", s(&bad), "--out", s(&dir.path().join("x.pmap"))]).code, 0);
}

#[test]
fn map_build_divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // two unrelated scenes: the second scan cannot register against the first
    let a: Vec<Point> = (0..400).map(|k| Point::new((k % 20) as f64 * 0.5, (k / 20) as f64 * 0.5, 0.0)).collect();
    let b: Vec<Point> = (0..400).map(|k| Point::new(300.0 + (k % 20) as f64, 300.0, (k / 20) as f64)).collect();
    let scans = vec![
        StampedScan { stamp: Timestamp(0), cloud: PointCloud::from_points("vehicle", a) },
        StampedScan { stamp: Timestamp(100_000_000), cloud: PointCloud::from_points("vehicle", b) },
    ];
    let path = dir.path().join("div.pscan");
    std::fs::write(&path, encode_scans(&scans)).unwrap();
    let o = run(&["map-build", "--scans", s(&path), "--out", s(&dir.path().join("m.pmap"))]);
    assert_eq!(o.code, 3, "{}", o.stderr);
    assert!(o.stderr.contains("scan 1"), "{}", o.stderr);
}

#[test]
fn sim_and_replay_twin() {
    let d = demo();
    let sim = sim_log("sim.ndjson", &[]);
    let rep = d.path("replay.ndjson");
    let o = run(&[
        "run", "--scenario", &d.scenario, "--map", &d.map, "--mode", "replay", "--scans",
        &d.scans, "--init-pose", &d.init_pose, "--log", s(&rep),
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(o.json()["status"], "completed");

    let o = run(&["twin-report", "--a", s(&sim), "--b", s(&rep)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let v = o.json();
    assert_eq!(v["sequences_equal"], true);
    assert!(v["max_position_distance"].as_f64().unwrap() < 0.5);
    assert_eq!(v["triggers"].as_array().unwrap().len(), 2);

    let o = run(&["twin-report", "--a", s(&sim), "--b", s(&sim)]);
    assert_eq!(o.code, 0);
    let v = o.json();
    assert_eq!(v["max_position_distance"], 0.0);
    assert_eq!(v["max_abs_time_offset"], 0.0);
}

#[test]
fn replay_argument_and_initialization_failures() {
    let d = demo();
    let base = ["run", "--scenario", &d.scenario, "--map", &d.map, "--mode", "replay"];
    let log = d.path("bad-replay.ndjson");
    let mut args = base.to_vec();
    args.extend_from_slice(&["--init-pose", &d.init_pose, "--log", s(&log)]);
    assert_eq!(run(&args).code, 64, "missing --scans");

    let mut args = base.to_vec();
    args.extend_from_slice(&["--scans", &d.scans, "--init-pose", "1 2 three 4", "--log", s(&log)]);
    assert_eq!(run(&args).code, 64, "malformed --init-pose");

    let v: Vec<f64> = d.init_pose.split_whitespace().map(|x| x.parse().unwrap()).collect();
    let off = format!("{} {} {} {}", v[0], v[1] + 4.0, v[2], v[3] + 1.5);
    let mut args = base.to_vec();
    args.extend_from_slice(&["--scans", &d.scans, "--init-pose", &off, "--log", s(&log)]);
    let o = run(&args);
    assert_eq!(o.code, 5, "{}", o.stderr);
    assert!(o.stderr.contains("error:"));
    let header = RunLog::load(&log).unwrap();
    assert!(header.initialization_error().is_some());
}

#[test]
fn twin_report_codes() {
    let d = demo();
    let full = sim_log("full.ndjson", &[]);
    let short = sim_log("short.ndjson", &["--max-duration", "3"]);
    let o = run(&["twin-report", "--a", s(&full), "--b", s(&short)]);
    assert_eq!(o.code, 8, "{}", o.stdout);
    assert_eq!(o.json()["sequences_equal"], false);

    // same map, different scenario
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(d.path("scenario.json")).unwrap()).unwrap();
    doc["render_distance"] = json!(30.0);
    let other = d.path("other.json");
    std::fs::write(&other, doc.to_string()).unwrap();
    let other_log = d.path("other.ndjson");
    let o = run(&["run", "--scenario", s(&other), "--map", &d.map, "--mode", "sim", "--log", s(&other_log)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(run(&["twin-report", "--a", s(&full), "--b", s(&other_log)]).code, 9);

    let junk = d.path("junk.ndjson");
    std::fs::write(&junk, "{\"not\": \"a record\"}\n").unwrap();
    assert_eq!(run(&["twin-report", "--a", s(&full), "--b", s(&junk)]).code, 2);
}

#[test]
fn unreachable_route_exits_6() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("box.pmap");
    write_box_map(&map);
    let mut doc = scenario_doc("box.pmap");
    doc["route"] = json!([
        {"position": [2, 0, 0], "target_speed": 8.0},
        {"position": [38, 0, 0], "target_speed": 8.0},
        {"position": [38, 0.3, 0], "target_speed": 8.0},
        {"position": [2, 0.3, 0], "target_speed": 8.0}
    ]);
    let sc = dir.path().join("hairpin.json");
    std::fs::write(&sc, doc.to_string()).unwrap();
    let log = dir.path().join("h.ndjson");
    let o = run(&["run", "--scenario", s(&sc), "--map", s(&map), "--mode", "sim", "--log", s(&log)]);
    assert_eq!(o.code, 6, "{}{}", o.stdout, o.stderr);
    assert_eq!(RunLog::load(&log).unwrap().status().map(|st| format!("{st:?}")), Some("RouteUnreachable".into()));
}

#[test]
fn occupied_bridge_port_exits_7() {
    let holder = TcpListener::bind("0.0.0.0:0").unwrap();
    let port = holder.local_addr().unwrap().port().to_string();
    let d = demo();
    let o = run(&[
        "--port", &port, "run", "--scenario", &d.scenario, "--map", &d.map, "--mode", "sim",
        "--publish", "--log", s(&d.path("bind.ndjson")),
    ]);
    assert_eq!(o.code, 7, "{}", o.stderr);
}

#[test]
fn port_environment_variable_and_flag_precedence() {
    let holder = TcpListener::bind("0.0.0.0:0").unwrap();
    let port = holder.local_addr().unwrap().port().to_string();
    let d = demo();
    let log = d.path("env.ndjson");
    let args = [
        "run", "--scenario", &d.scenario, "--map", &d.map, "--mode", "sim", "--publish",
        "--max-duration", "0.5", "--log", s(&log),
    ];
    let with_env = |extra: &[&str]| {
        let mut all: Vec<&str> = extra.to_vec();
        all.extend_from_slice(&args);
        Command::new(BIN).args(&all).env("PORTOBELLO_PORT", &port).output().unwrap().status.code()
    };
    // the env var points at the occupied port
    assert_eq!(with_env(&[]), Some(7));
    // the flag wins over it
    let free = TcpListener::bind("0.0.0.0:0").unwrap().local_addr().unwrap().port().to_string();
    assert_eq!(with_env(&["--port", &free]), Some(0));
}

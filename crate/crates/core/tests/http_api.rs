//! The console backend's HTTP API, driven in-process through the router.

use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use portobello::cli::{router, ServeState};
use portobello::harness::{synthesize_world, WorldSpec};
use portobello::pointcloud::{voxel_downsample, PointCloudMap};
use portobello::scenario::{parse_scenario, serialize_scenario, Scenario};

struct Fixture {
    app: Router,
    map: Arc<PointCloudMap>,
    scenario: Scenario,
    dir: tempfile::TempDir,
}

fn fixture() -> Fixture {
    let spec = WorldSpec { route_length: 120.0, crosswalks: 2, map_points: 20_000, ..WorldSpec::default() };
    let (world, scenario) = synthesize_world(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenario.json");
    std::fs::write(&path, serialize_scenario(&scenario)).unwrap();
    let map = (*world.map).clone();
    let state = ServeState::new(map, scenario.clone(), path, None);
    Fixture { app: router(state), map: world.map, scenario, dir }
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn put_text(app: &Router, uri: &str, text: String) -> (StatusCode, Value) {
    let req = Request::builder().method(Method::PUT).uri(uri).body(Body::from(text)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn command(app: &Router, body: Value) -> (StatusCode, Value) {
    call(app, Method::POST, "/run", Some(body)).await
}

async fn wait_for_state(app: &Router, state: &str, timeout: Duration) -> Value {
    let t0 = Instant::now();
    loop {
        let (_, v) = call(app, Method::GET, "/run", None).await;
        if v["state"] == state {
            return v;
        }
        assert!(t0.elapsed() < timeout, "state never became {state}: {v}");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn map_is_downsampled_and_paged() {
    let f = fixture();
    let (status, v) = call(&f.app, Method::GET, "/map", None).await;
    assert_eq!(status, StatusCode::OK);
    let expected = voxel_downsample(f.map.cloud(), 0.5);
    assert_eq!(v["sha256"], f.map.hash());
    assert_eq!(v["source_points"], f.map.len());
    assert_eq!(v["voxel"], 0.5);
    assert_eq!(v["total"], expected.len());
    assert_eq!(v["count"], expected.len());
    assert_eq!(v["points"][3], json!(expected.points[3].xyz()));

    let (_, page) = call(&f.app, Method::GET, "/map?voxel=1.0&offset=10&limit=5", None).await;
    let coarse = voxel_downsample(f.map.cloud(), 1.0);
    assert_eq!(page["total"], coarse.len());
    assert_eq!(page["offset"], 10);
    assert_eq!(page["count"], 5);
    assert_eq!(page["points"][0], json!(coarse.points[10].xyz()));

    let (_, tail) = call(&f.app, Method::GET, &format!("/map?voxel=1.0&offset={}", coarse.len() + 7), None).await;
    assert_eq!(tail["count"], 0);
    assert_eq!(call(&f.app, Method::GET, "/map?voxel=0", None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&f.app, Method::GET, "/map?voxel=-1", None).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scenario_get_and_put() {
    let f = fixture();
    let (status, v) = call(&f.app, Method::GET, "/scenario", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(parse_scenario(&v.to_string()).unwrap(), f.scenario);

    let mut doc: Value = serde_json::from_str(&serialize_scenario(&f.scenario)).unwrap();
    doc["triggers"][0]["surprise"] = json!(true);
    let (status, v) = put_text(&f.app, "/scenario", doc.to_string()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["valid"], false);
    assert_eq!(v["issues"][0]["kind"], "schema");
    assert!(v["issues"][0]["entity"].as_str().unwrap().starts_with("triggers[0]"), "{v}");

    let (status, v) = put_text(&f.app, "/scenario", "{ not json".into()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["valid"], false);

    let mut far = f.scenario.clone();
    let id = far.triggers[0].id.clone();
    let mut doc: Value = serde_json::from_str(&serialize_scenario(&far)).unwrap();
    let shape = doc["triggers"][0]["shape"].as_object_mut().unwrap();
    let inner = shape.values_mut().next().unwrap();
    inner["center"] = json!([900.0, 900.0, 0.0]);
    let (status, v) = put_text(&f.app, "/scenario", doc.to_string()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["valid"], false);
    let issues = v["issues"].as_array().unwrap();
    assert!(issues.iter().any(|i| i["entity"] == format!("triggers[{id}]") && i["severity"] == "error"), "{v}");

    // a valid edit is persisted and served back
    far.render_distance = 30.0;
    let (status, v) = put_text(&f.app, "/scenario", serialize_scenario(&far)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["valid"], true);
    let on_disk = std::fs::read_to_string(f.dir.path().join("scenario.json")).unwrap();
    assert_eq!(parse_scenario(&on_disk).unwrap().render_distance, 30.0);
    let (_, v) = call(&f.app, Method::GET, "/scenario", None).await;
    assert_eq!(v["render_distance"], 30.0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn run_lifecycle() {
    let f = fixture();
    let (_, idle) = call(&f.app, Method::GET, "/run", None).await;
    assert_eq!(idle["state"], "idle");
    assert_eq!(command(&f.app, json!({"command": "pause"})).await.0, StatusCode::CONFLICT);
    assert_eq!(command(&f.app, json!({"command": "proceed"})).await.0, StatusCode::CONFLICT);
    assert_eq!(command(&f.app, json!({"command": "start", "bogus": 1})).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(command(&f.app, json!({"command": "start", "time_scale": 0})).await.0, StatusCode::BAD_REQUEST);

    let (status, v) = command(&f.app, json!({"command": "start", "time_scale": 20.0})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["state"], "running");
    assert_eq!(command(&f.app, json!({"command": "start"})).await.0, StatusCode::CONFLICT);
    assert_eq!(put_text(&f.app, "/scenario", serialize_scenario(&f.scenario)).await.0, StatusCode::CONFLICT);

    let (status, v) = command(&f.app, json!({"command": "pause"})).await;
    assert_eq!(status, StatusCode::OK);
    let paused = wait_for_state(&f.app, "paused", Duration::from_secs(5)).await;
    tokio::time::sleep(Duration::from_millis(200)).await;
    let (_, later) = call(&f.app, Method::GET, "/run", None).await;
    assert_eq!(later["vehicle"], paused["vehicle"], "vehicle moved while paused ({v})");
    assert_eq!(command(&f.app, json!({"command": "resume"})).await.0, StatusCode::OK);

    // operator holds are on by default: the first stop waits for proceed
    let held = wait_for_state(&f.app, "holding_at_stop", Duration::from_secs(60)).await;
    assert_eq!(held["phase"], "awaiting_proceed");
    assert!(!held["fired"].as_array().unwrap().is_empty());
    tokio::time::sleep(Duration::from_millis(100)).await;
    assert_eq!(call(&f.app, Method::GET, "/run", None).await.1["state"], "holding_at_stop");
    assert_eq!(command(&f.app, json!({"command": "proceed"})).await.0, StatusCode::OK);
    wait_for_state(&f.app, "running", Duration::from_secs(5)).await;
    assert_eq!(command(&f.app, json!({"command": "proceed"})).await.0, StatusCode::CONFLICT);

    let (status, v) = command(&f.app, json!({"command": "stop"})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["state"], "finished");
    assert_eq!(v["status"], "stopped");
    assert_eq!(command(&f.app, json!({"command": "resume"})).await.0, StatusCode::CONFLICT);

    // a finished run can be replaced
    let (status, _) = command(&f.app, json!({"command": "start", "operator_holds": false, "time_scale": 50.0})).await;
    assert_eq!(status, StatusCode::OK);
    let done = wait_for_state(&f.app, "finished", Duration::from_secs(60)).await;
    assert_eq!(done["status"], "completed");
    assert_eq!(done["fired"].as_array().unwrap().len(), f.scenario.triggers.len());
}

/// Reads SSE frames until `want` named events have arrived.
async fn read_events(body: &mut Body, want: impl Fn(&[(String, Value)]) -> bool, timeout: Duration) -> Vec<(String, Value)> {
    let mut buf = String::new();
    let mut out = Vec::new();
    let deadline = tokio::time::Instant::now() + timeout;
    while !want(&out) {
        let frame = tokio::time::timeout_at(deadline, body.frame()).await.expect("events timed out").unwrap().unwrap();
        if let Ok(data) = frame.into_data() {
            buf.push_str(std::str::from_utf8(&data).unwrap());
        }
        while let Some(end) = buf.find("\n\n") {
            let block: String = buf.drain(..end + 2).collect();
            let (mut name, mut data) = (String::new(), String::new());
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("event:") {
                    name = v.trim().into();
                } else if let Some(v) = line.strip_prefix("data:") {
                    data.push_str(v.trim());
                }
            }
            if !name.is_empty() {
                out.push((name, serde_json::from_str(&data).unwrap_or(Value::Null)));
            }
        }
    }
    out
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn events_stream_status_triggers_and_heartbeats() {
    let f = fixture();
    let resp = f.app.clone().oneshot(Request::get("/events").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    let mut body = resp.into_body();

    let first = read_events(&mut body, |e| !e.is_empty(), Duration::from_secs(5)).await;
    assert_eq!(first[0].0, "status");
    assert_eq!(first[0].1["event"], "status");
    assert_eq!(first[0].1["state"], "idle");

    command(&f.app, json!({"command": "start", "operator_holds": false, "time_scale": 50.0})).await;
    let n = f.scenario.triggers.len();
    let seen = read_events(
        &mut body,
        |e| {
            e.iter().filter(|x| x.0 == "trigger").count() == n
                && e.iter().any(|x| x.0 == "heartbeat")
                && e.iter().any(|x| x.0 == "status" && x.1["state"] == "finished")
        },
        Duration::from_secs(60),
    )
    .await;
    let triggers: Vec<&str> = seen.iter().filter(|x| x.0 == "trigger").map(|x| x.1["trigger_id"].as_str().unwrap()).collect();
    let mut expected: Vec<&str> = f.scenario.triggers.iter().map(|t| t.id.as_str()).collect();
    expected.sort();
    let mut sorted = triggers.clone();
    sorted.sort();
    assert_eq!(sorted, expected);
    assert!(seen.iter().any(|x| x.0 == "tick" && x.1["state"] == "running"));
    let beat = seen.iter().find(|x| x.0 == "heartbeat").unwrap();
    assert!(beat.1["wall_ms"].as_u64().unwrap() > 0);
}

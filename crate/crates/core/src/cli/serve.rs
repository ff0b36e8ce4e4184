//! HTTP + server-sent-events backend for the staging console.
//!
//! All run mutations go through the sim's command queue; handlers only read
//! state under the same lock the run loop ticks under.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast;
use tokio_stream::wrappers::{BroadcastStream, IntervalStream};

use super::commands::{load_map, read_text};
use super::{exit, Cli, CliError, ServeArgs};
use crate::bridge::{resolve_port, BridgeConfig, BridgePublisher, BridgeServer};
use crate::frames::{RigidTransform, Timestamp};
use crate::harness::{OperatorCommand, RunStatus, SimConfig, SimStepper, VehiclePhase};
use crate::pointcloud::{voxel_downsample, PointCloudMap};
use crate::scenario::{
    parse_scenario, serialize_scenario, validate_against_map, Scenario, ScenarioError, TriggerEvent, TriggerState,
};

/// Voxel size of `GET /map` when none is requested, meters.
pub const DEFAULT_MAP_VOXEL: f64 = 0.5;
const EVENT_PERIOD_TICKS: u64 = 5;

/// Pushed to every `/events` subscriber.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ServerEvent {
    Tick(RunView),
    Trigger(TriggerEvent),
    Status(RunView),
}

impl ServerEvent {
    fn name(&self) -> &'static str {
        match self {
            ServerEvent::Tick(_) => "tick",
            ServerEvent::Trigger(_) => "trigger",
            ServerEvent::Status(_) => "status",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Idle,
    Running,
    Paused,
    HoldingAtStop,
    Finished,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AgentView {
    pub id: String,
    pub position: [f64; 3],
    pub yaw: f64,
    pub active: bool,
    pub visible: bool,
}

/// Everything the console needs to redraw, including after a reconnect.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunView {
    pub state: RunState,
    pub status: Option<RunStatus>,
    pub stamp: Timestamp,
    pub vehicle: Option<RigidTransform>,
    pub speed: f64,
    pub phase: Option<VehiclePhase>,
    pub agents: Vec<AgentView>,
    pub triggers: Vec<TriggerState>,
    pub fired: Vec<TriggerEvent>,
}

impl RunView {
    fn idle() -> RunView {
        RunView {
            state: RunState::Idle,
            status: None,
            stamp: Timestamp(0),
            vehicle: None,
            speed: 0.0,
            phase: None,
            agents: Vec::new(),
            triggers: Vec::new(),
            fired: Vec::new(),
        }
    }

    fn of(sim: &SimStepper) -> RunView {
        let v = sim.vehicle();
        let pose = v.pose();
        let visible = sim.run().visible(&pose);
        let state = if sim.status().is_some() {
            RunState::Finished
        } else if v.phase == VehiclePhase::AwaitingProceed {
            RunState::HoldingAtStop
        } else if sim.is_paused() {
            RunState::Paused
        } else {
            RunState::Running
        };
        RunView {
            state,
            status: sim.status(),
            stamp: sim.stamp(),
            vehicle: Some(pose),
            speed: v.speed,
            phase: Some(v.phase),
            agents: sim
                .run()
                .agents()
                .iter()
                .map(|a| AgentView {
                    id: a.id.clone(),
                    position: a.position(),
                    yaw: a.pose.yaw(),
                    active: a.active,
                    visible: visible.contains(&a.id),
                })
                .collect(),
            triggers: sim.run().triggers().to_vec(),
            fired: sim.log().trigger_events(),
        }
    }
}

struct ActiveRun {
    sim: Arc<Mutex<SimStepper>>,
    stop: Arc<AtomicBool>,
    thread: Option<thread::JoinHandle<()>>,
}

impl Drop for ActiveRun {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub struct ServeState {
    map: Arc<PointCloudMap>,
    scenario_path: PathBuf,
    scenario: RwLock<Scenario>,
    run: Mutex<Option<ActiveRun>>,
    events: broadcast::Sender<ServerEvent>,
    bridge: Option<BridgePublisher>,
}

impl ServeState {
    pub fn new(map: PointCloudMap, scenario: Scenario, scenario_path: PathBuf, bridge: Option<BridgePublisher>) -> Arc<ServeState> {
        let (events, _) = broadcast::channel(1024);
        Arc::new(ServeState {
            map: Arc::new(map),
            scenario_path,
            scenario: RwLock::new(scenario),
            run: Mutex::new(None),
            events,
            bridge,
        })
    }

    fn view(&self) -> RunView {
        match self.run.lock().unwrap().as_ref() {
            Some(r) => RunView::of(&r.sim.lock().unwrap()),
            None => RunView::idle(),
        }
    }

    fn running(&self) -> bool {
        self.run.lock().unwrap().as_ref().is_some_and(|r| r.sim.lock().unwrap().status().is_none())
    }
}

pub fn router(state: Arc<ServeState>) -> Router {
    Router::new()
        .route("/map", get(get_map))
        .route("/scenario", get(get_scenario).put(put_scenario))
        .route("/run", get(get_run).post(post_run))
        .route("/events", get(events))
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

#[derive(Debug, Deserialize)]
struct MapQuery {
    voxel: Option<f64>,
    offset: Option<usize>,
    limit: Option<usize>,
}

async fn get_map(State(st): State<Arc<ServeState>>, Query(q): Query<MapQuery>) -> Response {
    let voxel = q.voxel.unwrap_or(DEFAULT_MAP_VOXEL);
    if !(voxel > 0.0 && voxel.is_finite()) {
        return error(StatusCode::BAD_REQUEST, "voxel must be positive");
    }
    let map = Arc::clone(&st.map);
    let down = tokio::task::spawn_blocking(move || voxel_downsample(map.cloud(), voxel)).await.expect("downsample task");
    let total = down.len();
    let offset = q.offset.unwrap_or(0).min(total);
    let end = q.limit.map_or(total, |l| offset.saturating_add(l).min(total));
    let points: Vec<[f64; 3]> = down.points[offset..end].iter().map(|p| p.xyz()).collect();
    Json(json!({
        "sha256": st.map.hash(),
        "source_points": st.map.len(),
        "voxel": voxel,
        "total": total,
        "offset": offset,
        "count": points.len(),
        "points": points,
    }))
    .into_response()
}

async fn get_scenario(State(st): State<Arc<ServeState>>) -> Response {
    let s = st.scenario.read().unwrap().clone();
    (StatusCode::OK, [("content-type", "application/json")], serialize_scenario(&s)).into_response()
}

async fn put_scenario(State(st): State<Arc<ServeState>>, body: String) -> Response {
    if st.running() {
        return error(StatusCode::CONFLICT, "cannot replace the scenario while a run is active");
    }
    let scenario = match parse_scenario(&body) {
        Ok(s) => s,
        Err(e) => {
            let (kind, entity) = match &e {
                ScenarioError::Schema { path, .. } => ("schema", path.clone()),
                ScenarioError::DanglingReference(id) => ("dangling_reference", id.clone()),
                ScenarioError::DuplicateId(id) => ("duplicate_id", id.clone()),
            };
            let issue = json!({ "severity": "error", "kind": kind, "entity": entity, "message": e.to_string() });
            return (StatusCode::UNPROCESSABLE_ENTITY, Json(json!({ "valid": false, "issues": [issue] }))).into_response();
        }
    };
    let report = validate_against_map(&scenario, &st.map);
    if report.has_errors() {
        return (StatusCode::UNPROCESSABLE_ENTITY, Json(json!({ "valid": false, "issues": report.issues }))).into_response();
    }
    if let Err(e) = std::fs::write(&st.scenario_path, serialize_scenario(&scenario)) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, format!("{}: {e}", st.scenario_path.display()));
    }
    *st.scenario.write().unwrap() = scenario;
    Json(json!({ "valid": true, "issues": report.issues })).into_response()
}

async fn get_run(State(st): State<Arc<ServeState>>) -> Json<RunView> {
    Json(st.view())
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    Start,
    Pause,
    Resume,
    Proceed,
    Stop,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunRequest {
    command: Command,
    /// Start only: hold at stops until `proceed` (default true).
    #[serde(default)]
    operator_holds: Option<bool>,
    /// Start only: simulated seconds per wall-clock second (default 1).
    #[serde(default)]
    time_scale: Option<f64>,
}

async fn post_run(State(st): State<Arc<ServeState>>, Json(req): Json<RunRequest>) -> Response {
    let st2 = Arc::clone(&st);
    tokio::task::spawn_blocking(move || handle_run(&st2, req)).await.expect("run command task")
}

fn handle_run(st: &Arc<ServeState>, req: RunRequest) -> Response {
    if let Command::Start = req.command {
        if st.running() {
            return error(StatusCode::CONFLICT, "a run is already active");
        }
        let scale = req.time_scale.unwrap_or(1.0);
        if !(scale > 0.0 && scale.is_finite()) {
            return error(StatusCode::BAD_REQUEST, "time_scale must be positive");
        }
        let scenario = st.scenario.read().unwrap().clone();
        let cfg = SimConfig { operator_holds: req.operator_holds.unwrap_or(true), ..Default::default() };
        let sim = match SimStepper::new(&scenario, cfg) {
            Ok(s) => Arc::new(Mutex::new(s)),
            Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        };
        let stop = Arc::new(AtomicBool::new(false));
        let thread = {
            let (sim, stop, st) = (Arc::clone(&sim), Arc::clone(&stop), Arc::clone(st));
            thread::Builder::new().name("serve-run".into()).spawn(move || run_loop(&st, &sim, &stop, scale)).expect("spawn")
        };
        // replacing the finished run joins its thread
        *st.run.lock().unwrap() = Some(ActiveRun { sim, stop, thread: Some(thread) });
        let view = st.view();
        let _ = st.events.send(ServerEvent::Status(view.clone()));
        return Json(view).into_response();
    }

    let guard = st.run.lock().unwrap();
    let Some(run) = guard.as_ref() else {
        return error(StatusCode::CONFLICT, "no run has been started");
    };
    let view = {
        let mut sim = run.sim.lock().unwrap();
        if sim.status().is_some() {
            return error(StatusCode::CONFLICT, "the run has finished");
        }
        match req.command {
            Command::Pause => sim.push_command(OperatorCommand::Pause),
            Command::Resume => sim.push_command(OperatorCommand::Resume),
            Command::Proceed => {
                if sim.vehicle().phase != VehiclePhase::AwaitingProceed {
                    return error(StatusCode::CONFLICT, "the vehicle is not holding at a stop");
                }
                sim.push_command(OperatorCommand::Proceed);
            }
            Command::Stop => sim.stop(),
            Command::Start => unreachable!(),
        }
        RunView::of(&sim)
    };
    drop(guard);
    if view.state == RunState::Finished {
        let _ = st.events.send(ServerEvent::Status(view.clone()));
    }
    Json(view).into_response()
}

fn run_loop(st: &ServeState, sim: &Mutex<SimStepper>, stop: &AtomicBool, scale: f64) {
    let wall0 = Instant::now();
    let mut last_state = None;
    let mut tick = 0u64;
    while !stop.load(Ordering::Acquire) {
        let (view, events, done) = {
            let mut s = sim.lock().unwrap();
            if s.status().is_some() {
                (RunView::of(&s), Vec::new(), true)
            } else {
                let out = s.step();
                let events = out.map(|o| o.events).unwrap_or_default();
                (RunView::of(&s), events, s.status().is_some())
            }
        };
        if let Some(b) = &st.bridge {
            let snap = sim.lock().unwrap().snapshot();
            b.update_from_run(&snap);
            for e in &events {
                b.trigger_fired(&e.trigger_id, e.stamp, &e.vehicle_pose_at_fire);
            }
        }
        for e in events {
            let _ = st.events.send(ServerEvent::Trigger(e));
        }
        if last_state != Some(view.state) {
            last_state = Some(view.state);
            let _ = st.events.send(ServerEvent::Status(view.clone()));
        } else if tick % EVENT_PERIOD_TICKS == 0 {
            let _ = st.events.send(ServerEvent::Tick(view.clone()));
        }
        if done {
            return;
        }
        tick += 1;
        let due = wall0 + Duration::from_secs_f64(view.stamp.as_secs_f64() / scale);
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            thread::sleep(wait);
        }
    }
}

async fn events(State(st): State<Arc<ServeState>>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    // the current state first, so a reconnecting console can resynchronize
    let first = stream::once(futures::future::ready(ServerEvent::Status(st.view())));
    let live = BroadcastStream::new(st.events.subscribe()).filter_map(|r| futures::future::ready(r.ok()));
    let data = first.chain(live).map(|e| {
        Ok(Event::default().event(e.name()).json_data(&e).expect("event serializes"))
    });
    let beats = IntervalStream::new(tokio::time::interval(Duration::from_secs(1)))
        .map(|_| {
            let ms = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_millis());
            Ok(Event::default().event("heartbeat").data(json!({ "wall_ms": ms }).to_string()))
        });
    Sse::new(stream::select(data, beats)).keep_alive(KeepAlive::default())
}

pub fn serve(cli: &Cli, a: &ServeArgs) -> Result<i32, CliError> {
    let map = load_map(&a.map)?;
    let scenario = parse_scenario(&read_text(&a.scenario)?)
        .map_err(|e| CliError::new(exit::VALIDATION, format!("{}: {e}", a.scenario.display())))?;
    let port = resolve_port(cli.port).map_err(|e| CliError::new(exit::USAGE, e))?;
    let bridge = BridgeServer::bind((a.bind.as_str(), port), BridgeConfig::default())
        .map_err(|e| CliError::new(exit::BIND, e.to_string()))?;
    bridge.publisher().set_map(map.cloud().points.iter().map(|p| p.xyz()).collect());
    let state = ServeState::new(map, scenario, a.scenario.clone(), Some(bridge.publisher()));

    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::new(exit::FAILURE, e.to_string()))?;
    rt.block_on(async move {
        let addr = format!("{}:{}", a.bind, a.http_port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::new(exit::BIND, format!("cannot bind {addr}: {e}")))?;
        let local: SocketAddr = listener.local_addr().map_err(|e| CliError::new(exit::BIND, e.to_string()))?;
        super::commands::print_json(&json!({ "http": local.to_string(), "bridge": bridge.local_addr().to_string() }));
        axum::serve(listener, router(state)).await.map_err(|e| CliError::new(exit::FAILURE, e.to_string()))
    })?;
    Ok(exit::OK)
}

//! C ABI over the portobello engine.
//!
//! Conventions:
//! - every fallible call returns a [`PbStatus`]; on failure the message is
//!   available from [`pb_last_error`] on the same thread;
//! - handles are opaque and owned by the caller, who releases them with the
//!   matching `*_free`;
//! - a pose is `double[7]`: tx ty tz qw qx qy qz (map frame, meters);
//! - strings returned through `char **` are released with [`pb_string_free`],
//!   byte buffers with [`pb_bytes_free`];
//! - stamps are nanoseconds.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use portobello::bridge::wire::HEADER_LEN;
use portobello::bridge::{convert_pose, decode, encode, RendererConvention, WireMessage, WIRE_MAGIC};
use portobello::frames::{RigidTransform, Timestamp};
use portobello::localization::{initialize, Localizer, LocalizerConfig};
use portobello::pointcloud::{load_cloud, save_cloud, Point, PointCloud, PointCloudMap};
use portobello::scenario::{parse_scenario, serialize_scenario, validate_against_map, Scenario, ScenarioRun};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    /// Malformed map, scan or wire bytes.
    Format = 4,
    /// Scenario document rejected: schema, dangling reference or duplicate id.
    Schema = 5,
    /// Scenario parsed but has placement errors against the map.
    Validation = 6,
    InitializationFailed = 7,
    /// A Rust panic was caught at the boundary.
    Internal = 99,
}

/// Axis convention of a renderer.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PbConvention {
    /// The map frame.
    RightZUp = 0,
    LeftZUp = 1,
    RightYUp = 2,
    LeftYUp = 3,
}

impl From<PbConvention> for RendererConvention {
    fn from(c: PbConvention) -> Self {
        let name = match c {
            PbConvention::RightZUp => "rh-z-up",
            PbConvention::LeftZUp => "lh-z-up",
            PbConvention::RightYUp => "rh-y-up",
            PbConvention::LeftYUp => "lh-y-up",
        };
        RendererConvention::parse(name).expect("known convention")
    }
}

/// A point-cloud map with its spatial index.
pub struct PbMap {
    map: Arc<PointCloudMap>,
}

/// A parsed, reference-checked scenario.
pub struct PbScenario {
    scenario: Arc<Scenario>,
}

/// Trigger and agent state of one scenario execution.
pub struct PbRun {
    run: ScenarioRun,
}

/// Scan-to-map localizer bound to one map.
pub struct PbLocalizer {
    localizer: Localizer,
    map: Arc<PointCloudMap>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

type Failure = (PbStatus, String);

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PbStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal error: {msg}"));
            PbStatus::Internal
        }
    }
}

fn null(what: &str) -> Failure {
    (PbStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (PbStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

fn string_out(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("NULs removed").into_raw()
}

unsafe fn read_pose(p: *const f64) -> Result<RigidTransform, Failure> {
    if p.is_null() {
        return Err(null("pose"));
    }
    let v = std::slice::from_raw_parts(p, 7);
    if v.iter().any(|c| !c.is_finite()) {
        return Err((PbStatus::InvalidArgument, "pose components must be finite".into()));
    }
    let norm = (v[3] * v[3] + v[4] * v[4] + v[5] * v[5] + v[6] * v[6]).sqrt();
    if (norm - 1.0).abs() > 1e-6 {
        return Err((PbStatus::InvalidArgument, format!("pose quaternion has norm {norm}, expected 1")));
    }
    Ok(RigidTransform::from_wxyz([v[3], v[4], v[5], v[6]], [v[0], v[1], v[2]]))
}

unsafe fn write_pose(t: &RigidTransform, out: *mut f64) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("pose output"));
    }
    let [x, y, z] = t.translation_array();
    let [w, qx, qy, qz] = t.quaternion_wxyz();
    std::slice::from_raw_parts_mut(out, 7).copy_from_slice(&[x, y, z, w, qx, qy, qz]);
    Ok(())
}

unsafe fn read_cloud(xyz: *const f64, count: usize, frame: &str) -> Result<PointCloud, Failure> {
    if count == 0 {
        return Ok(PointCloud::new(frame));
    }
    if xyz.is_null() {
        return Err(null("points"));
    }
    let v = std::slice::from_raw_parts(xyz, count.checked_mul(3).ok_or((PbStatus::InvalidArgument, "count overflows".into()))?);
    if v.iter().any(|c| !c.is_finite()) {
        return Err((PbStatus::InvalidArgument, "point coordinates must be finite".into()));
    }
    Ok(PointCloud::from_points(frame, v.chunks_exact(3).map(|c| Point::new(c[0], c[1], c[2])).collect()))
}

// ---- errors and memory ----

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn pb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn pb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub unsafe extern "C" fn pb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub unsafe extern "C" fn pb_bytes_free(bytes: *mut u8, len: usize) {
    if !bytes.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(bytes, len)));
    }
}

// ---- maps ----

#[no_mangle]
pub unsafe extern "C" fn pb_map_load(path: *const c_char, out: *mut *mut PbMap) -> PbStatus {
    guard(|| {
        let path = c_str(path, "path")?;
        let cloud = load_cloud(path).map_err(|e| {
            let status = if e.is_format() { PbStatus::Format } else { PbStatus::Io };
            (status, format!("{path}: {e}"))
        })?;
        let map = Box::new(PbMap { map: Arc::new(PointCloudMap::new(cloud)) });
        put(out, Box::into_raw(map), "out")
    })
}

/// Builds a map from `count` xyz triples.
#[no_mangle]
pub unsafe extern "C" fn pb_map_from_points(xyz: *const f64, count: usize, out: *mut *mut PbMap) -> PbStatus {
    guard(|| {
        let cloud = read_cloud(xyz, count, portobello::frames::MAP_FRAME)?;
        put(out, Box::into_raw(Box::new(PbMap { map: Arc::new(PointCloudMap::new(cloud)) })), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn pb_map_save(map: *const PbMap, path: *const c_char) -> PbStatus {
    guard(|| {
        let map = as_ref(map, "map")?;
        let path = c_str(path, "path")?;
        save_cloud(map.map.cloud(), path).map_err(|e| (PbStatus::Io, format!("{path}: {e}")))
    })
}

/// Number of points; 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn pb_map_len(map: *const PbMap) -> usize {
    map.as_ref().map_or(0, |m| m.map.len())
}

/// Writes the 64-character hex SHA-256 plus NUL; `buf_len` must be ≥ 65.
#[no_mangle]
pub unsafe extern "C" fn pb_map_hash(map: *const PbMap, buf: *mut c_char, buf_len: usize) -> PbStatus {
    guard(|| {
        let map = as_ref(map, "map")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let h = map.map.hash().as_bytes();
        if buf_len < h.len() + 1 {
            return Err((PbStatus::InvalidArgument, format!("buffer needs {} bytes", h.len() + 1)));
        }
        ptr::copy_nonoverlapping(h.as_ptr().cast(), buf, h.len());
        *buf.add(h.len()) = 0;
        Ok(())
    })
}

/// Closest map point to `xyz[3]`.
#[no_mangle]
pub unsafe extern "C" fn pb_map_nearest(map: *const PbMap, xyz: *const f64, out_index: *mut usize, out_distance: *mut f64) -> PbStatus {
    guard(|| {
        let map = as_ref(map, "map")?;
        if xyz.is_null() {
            return Err(null("xyz"));
        }
        let q = [*xyz, *xyz.add(1), *xyz.add(2)];
        let n = map.map.index().nearest(&q).ok_or((PbStatus::InvalidArgument, "map is empty".to_string()))?;
        put(out_index, n.index, "out_index")?;
        put(out_distance, n.distance, "out_distance")
    })
}

#[no_mangle]
pub unsafe extern "C" fn pb_map_free(map: *mut PbMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

// ---- scenarios ----

#[no_mangle]
pub unsafe extern "C" fn pb_scenario_parse(json: *const c_char, out: *mut *mut PbScenario) -> PbStatus {
    guard(|| {
        let text = c_str(json, "json")?;
        let scenario = parse_scenario(text).map_err(|e| (PbStatus::Schema, e.to_string()))?;
        put(out, Box::into_raw(Box::new(PbScenario { scenario: Arc::new(scenario) })), "out")
    })
}

/// Canonical pretty JSON of the scenario.
#[no_mangle]
pub unsafe extern "C" fn pb_scenario_to_json(s: *const PbScenario, out: *mut *mut c_char) -> PbStatus {
    guard(|| {
        let s = as_ref(s, "scenario")?;
        put(out, string_out(serialize_scenario(&s.scenario)), "out")
    })
}

/// Checks placement against the map. Writes the report as JSON when `out` is
/// non-NULL and returns `Validation` if it contains errors.
#[no_mangle]
pub unsafe extern "C" fn pb_scenario_validate(s: *const PbScenario, map: *const PbMap, out: *mut *mut c_char) -> PbStatus {
    guard(|| {
        let s = as_ref(s, "scenario")?;
        let map = as_ref(map, "map")?;
        let report = validate_against_map(&s.scenario, &map.map);
        if !out.is_null() {
            out.write(string_out(serde_json::to_string(&report).expect("report serializes")));
        }
        if report.has_errors() {
            let first = report.errors().next().map(|i| format!("{}: {}", i.entity, i.message)).unwrap_or_default();
            return Err((PbStatus::Validation, first));
        }
        Ok(())
    })
}

/// Hex SHA-256 identifying the scenario in run logs.
#[no_mangle]
pub unsafe extern "C" fn pb_scenario_hash(s: *const PbScenario, out: *mut *mut c_char) -> PbStatus {
    guard(|| {
        let s = as_ref(s, "scenario")?;
        put(out, string_out(s.scenario.content_hash()), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn pb_scenario_free(s: *mut PbScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

// ---- scenario execution ----

#[no_mangle]
pub unsafe extern "C" fn pb_run_new(s: *const PbScenario, out: *mut *mut PbRun) -> PbStatus {
    guard(|| {
        let s = as_ref(s, "scenario")?;
        put(out, Box::into_raw(Box::new(PbRun { run: ScenarioRun::new(Arc::clone(&s.scenario)) })), "out")
    })
}

/// Evaluates triggers at the vehicle pose. Writes the number of firings to
/// `out_fired` and, when `out_events` is non-NULL, the events as a JSON array.
#[no_mangle]
pub unsafe extern "C" fn pb_run_trigger_step(
    run: *mut PbRun,
    vehicle_pose: *const f64,
    stamp_ns: u64,
    out_fired: *mut usize,
    out_events: *mut *mut c_char,
) -> PbStatus {
    guard(|| {
        let run = as_mut(run, "run")?;
        let pose = read_pose(vehicle_pose)?;
        let events = run.run.trigger_step(&pose, Timestamp(stamp_ns));
        if !out_fired.is_null() {
            out_fired.write(events.len());
        }
        if !out_events.is_null() {
            out_events.write(string_out(serde_json::to_string(&events).expect("events serialize")));
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pb_run_agent_step(run: *mut PbRun, dt: f64) -> PbStatus {
    guard(|| {
        let run = as_mut(run, "run")?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err((PbStatus::InvalidArgument, "dt must be positive".into()));
        }
        run.run.agent_step(dt);
        Ok(())
    })
}

/// Number of agents; 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn pb_run_agent_count(run: *const PbRun) -> usize {
    run.as_ref().map_or(0, |r| r.run.agents().len())
}

/// Pose and flags of agent `index` (scenario order). `visible` applies the
/// render cap relative to the last vehicle pose given to trigger_step.
#[no_mangle]
pub unsafe extern "C" fn pb_run_agent(
    run: *const PbRun,
    index: usize,
    out_pose: *mut f64,
    out_active: *mut bool,
    out_visible: *mut bool,
) -> PbStatus {
    guard(|| {
        let run = as_ref(run, "run")?;
        let agent = run.run.agents().get(index).ok_or((PbStatus::InvalidArgument, format!("no agent {index}")))?;
        write_pose(&agent.pose, out_pose)?;
        if !out_active.is_null() {
            out_active.write(agent.active);
        }
        if !out_visible.is_null() {
            let snap = run.run.snapshot();
            out_visible.write(snap.visible.contains(&agent.id));
        }
        Ok(())
    })
}

/// Full run snapshot as JSON.
#[no_mangle]
pub unsafe extern "C" fn pb_run_snapshot_json(run: *const PbRun, out: *mut *mut c_char) -> PbStatus {
    guard(|| {
        let run = as_ref(run, "run")?;
        put(out, string_out(serde_json::to_string(&run.run.snapshot()).expect("snapshot serializes")), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn pb_run_free(run: *mut PbRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

// ---- localization ----

/// Starts a localizer at `initial_pose`, refined against the first scan.
#[no_mangle]
pub unsafe extern "C" fn pb_localizer_new(
    map: *const PbMap,
    initial_pose: *const f64,
    scan_xyz: *const f64,
    scan_count: usize,
    stamp_ns: u64,
    out: *mut *mut PbLocalizer,
) -> PbStatus {
    guard(|| {
        let map = as_ref(map, "map")?;
        let pose = read_pose(initial_pose)?;
        let scan = read_cloud(scan_xyz, scan_count, portobello::frames::VEHICLE_FRAME)?;
        let cfg = LocalizerConfig::default();
        let state = initialize(&pose, None, &scan, Timestamp(stamp_ns), &map.map, &cfg)
            .map_err(|e| (PbStatus::InitializationFailed, e.to_string()))?;
        let loc = PbLocalizer { localizer: Localizer::new(state, cfg), map: Arc::clone(&map.map) };
        put(out, Box::into_raw(Box::new(loc)), "out")
    })
}

/// Registers a scan (vehicle frame). Non-convergence is not an error: the
/// pose holds the prediction and `out_converged` is false.
#[no_mangle]
pub unsafe extern "C" fn pb_localizer_update(
    loc: *mut PbLocalizer,
    scan_xyz: *const f64,
    scan_count: usize,
    stamp_ns: u64,
    out_pose: *mut f64,
    out_fitness: *mut f64,
    out_converged: *mut bool,
) -> PbStatus {
    guard(|| {
        let loc = as_mut(loc, "localizer")?;
        let scan = read_cloud(scan_xyz, scan_count, portobello::frames::VEHICLE_FRAME)?;
        let map = Arc::clone(&loc.map);
        let est = loc.localizer.update(&scan, Timestamp(stamp_ns), &map);
        write_pose(&est.map_to_vehicle, out_pose)?;
        if !out_fitness.is_null() {
            out_fitness.write(est.fitness);
        }
        if !out_converged.is_null() {
            out_converged.write(est.converged);
        }
        Ok(())
    })
}

/// Constant-velocity pose at `stamp_ns`.
#[no_mangle]
pub unsafe extern "C" fn pb_localizer_predict(loc: *const PbLocalizer, stamp_ns: u64, out_pose: *mut f64) -> PbStatus {
    guard(|| {
        let loc = as_ref(loc, "localizer")?;
        write_pose(&loc.localizer.predict(Timestamp(stamp_ns)), out_pose)
    })
}

#[no_mangle]
pub unsafe extern "C" fn pb_localizer_free(loc: *mut PbLocalizer) {
    if !loc.is_null() {
        drop(Box::from_raw(loc));
    }
}

// ---- wire protocol ----

/// Encodes a message given in its JSON form into one frame.
#[no_mangle]
pub unsafe extern "C" fn pb_wire_encode_json(json: *const c_char, out_bytes: *mut *mut u8, out_len: *mut usize) -> PbStatus {
    guard(|| {
        let text = c_str(json, "json")?;
        let msg: WireMessage = serde_json::from_str(text).map_err(|e| (PbStatus::InvalidArgument, e.to_string()))?;
        if out_bytes.is_null() || out_len.is_null() {
            return Err(null("output"));
        }
        let bytes = encode(&msg).into_boxed_slice();
        out_len.write(bytes.len());
        out_bytes.write(Box::into_raw(bytes).cast());
        Ok(())
    })
}

/// Decodes exactly one frame into its JSON form.
#[no_mangle]
pub unsafe extern "C" fn pb_wire_decode_json(bytes: *const u8, len: usize, out_json: *mut *mut c_char) -> PbStatus {
    guard(|| {
        if bytes.is_null() && len > 0 {
            return Err(null("bytes"));
        }
        let slice = if len == 0 { &[][..] } else { std::slice::from_raw_parts(bytes, len) };
        let msg = decode(slice).map_err(|e| (PbStatus::Format, e.to_string()))?;
        put(out_json, string_out(serde_json::to_string(&msg).expect("message serializes")), "out_json")
    })
}

/// Total frame size announced by a 9-byte header, for stream reassembly.
#[no_mangle]
pub unsafe extern "C" fn pb_wire_frame_len(header: *const u8, header_len: usize, out_total: *mut usize) -> PbStatus {
    guard(|| {
        if header.is_null() {
            return Err(null("header"));
        }
        if header_len < HEADER_LEN {
            return Err((PbStatus::InvalidArgument, format!("need {HEADER_LEN} header bytes")));
        }
        let h = std::slice::from_raw_parts(header, HEADER_LEN);
        if &h[..4] != WIRE_MAGIC {
            return Err((PbStatus::Format, "bad magic".into()));
        }
        let payload = u32::from_le_bytes([h[4], h[5], h[6], h[7]]) as usize;
        put(out_total, HEADER_LEN + payload, "out_total")
    })
}

// ---- conventions ----

/// Re-expresses a pose in another renderer convention. `pose_out` may alias
/// `pose_in`.
#[no_mangle]
pub unsafe extern "C" fn pb_convert_pose(pose_in: *const f64, from: PbConvention, to: PbConvention, pose_out: *mut f64) -> PbStatus {
    guard(|| {
        let t = read_pose(pose_in)?;
        write_pose(&convert_pose(&t, from.into(), to.into()), pose_out)
    })
}

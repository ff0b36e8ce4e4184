//! Pub-sub TCP server for renderer clients.
//!
//! One publish thread samples the latest snapshot at a fixed rate and hands it
//! to every subscribed client; each client has its own writer thread, so a slow
//! socket only ever delays itself. Transforms and agent poses are last-value
//! slots (stale values are overwritten); trigger events go through a bounded
//! per-client queue and are never dropped. A client whose queue overflows is
//! disconnected.

use std::collections::BTreeSet;
use std::io::{self, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicU8, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, select, unbounded, Receiver, Sender, TrySendError};
use log::{debug, info, warn};

use super::convention::{convert_point, convert_pose, RendererConvention};
use super::wire::{encode, read_frame, WireMessage};
use crate::frames::{RigidTransform, Timestamp, MAP_FRAME, VEHICLE_FRAME};
use crate::scenario::RunSnapshot;

pub const DEFAULT_PORT: u16 = 17333;
pub const PORT_ENV: &str = "PORTOBELLO_PORT";
pub const RELIABLE_QUEUE_DEPTH: usize = 1024;
pub const DEFAULT_RATE_HZ: f64 = 10.0;

/// Flag beats environment beats default.
pub fn resolve_port(flag: Option<u16>) -> Result<u16, String> {
    if let Some(p) = flag {
        return Ok(p);
    }
    match std::env::var(PORT_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| format!("{PORT_ENV}={v:?} is not a port number")),
        Err(_) => Ok(DEFAULT_PORT),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Topic {
    Tf,
    Agents,
    Triggers,
    Map,
}

impl Topic {
    pub fn parse(s: &str) -> Option<Topic> {
        match s {
            "tf" => Some(Topic::Tf),
            "agents" => Some(Topic::Agents),
            "triggers" => Some(Topic::Triggers),
            "map" => Some(Topic::Map),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Topic::Tf => "tf",
            Topic::Agents => "agents",
            Topic::Triggers => "triggers",
            Topic::Map => "map",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

#[derive(Clone, Debug)]
pub struct BridgeConfig {
    pub rate_hz: f64,
    pub heartbeat_period: Duration,
    pub queue_depth: usize,
    pub convention: RendererConvention,
    pub map_chunk_points: usize,
    /// A write blocked longer than this disconnects the client.
    pub write_timeout: Duration,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        BridgeConfig {
            rate_hz: DEFAULT_RATE_HZ,
            heartbeat_period: Duration::from_secs(1),
            queue_depth: RELIABLE_QUEUE_DEPTH,
            convention: RendererConvention::MAP,
            map_chunk_points: 4096,
            write_timeout: Duration::from_secs(5),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentPose {
    pub id: String,
    pub pose: RigidTransform,
    pub visible: bool,
}

/// What the publish thread samples each tick.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BridgeSnapshot {
    pub stamp: Timestamp,
    /// map→vehicle.
    pub vehicle: Option<RigidTransform>,
    pub agents: Vec<AgentPose>,
}

impl From<&RunSnapshot> for BridgeSnapshot {
    fn from(s: &RunSnapshot) -> Self {
        BridgeSnapshot {
            stamp: s.stamp,
            vehicle: s.vehicle,
            agents: s
                .agents
                .iter()
                .map(|a| AgentPose { id: a.id.clone(), pose: a.pose, visible: s.visible.contains(&a.id) })
                .collect(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BridgeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
}

struct Client {
    id: u64,
    peer: SocketAddr,
    stream: TcpStream,
    topics: AtomicU8,
    subscribed: AtomicBool,
    alive: AtomicBool,
    reliable: Sender<WireMessage>,
    control: Sender<WireMessage>,
    wake: Sender<()>,
    latest: Mutex<Option<Arc<BridgeSnapshot>>>,
}

impl Client {
    fn has(&self, t: Topic) -> bool {
        self.topics.load(Ordering::Acquire) & t.bit() != 0
    }

    fn kill(&self, why: &str) {
        if self.alive.swap(false, Ordering::AcqRel) {
            info!("bridge client {} ({}) disconnected: {why}", self.id, self.peer);
            let _ = self.stream.shutdown(Shutdown::Both);
        }
    }
}

struct Shared {
    config: BridgeConfig,
    clients: Mutex<Vec<Arc<Client>>>,
    current: Mutex<Arc<BridgeSnapshot>>,
    map: RwLock<Option<Arc<Vec<[f64; 3]>>>>,
    stop: AtomicBool,
    next_id: AtomicU64,
}

/// Producer-side handle. Never blocks on clients.
#[derive(Clone)]
pub struct BridgePublisher {
    shared: Arc<Shared>,
}

impl BridgePublisher {
    pub fn update(&self, snapshot: BridgeSnapshot) {
        *self.shared.current.lock().unwrap() = Arc::new(snapshot);
    }

    pub fn update_from_run(&self, s: &RunSnapshot) {
        self.update(BridgeSnapshot::from(s));
    }

    /// Queues a trigger event for every client subscribed to `triggers`.
    pub fn trigger_fired(&self, trigger_id: &str, stamp: Timestamp, pose: &RigidTransform) {
        let msg = WireMessage::TriggerFired {
            trigger_id: trigger_id.to_string(),
            stamp,
            pose: convert_pose(pose, RendererConvention::MAP, self.shared.config.convention),
        };
        for c in self.shared.clients.lock().unwrap().iter() {
            if !c.alive.load(Ordering::Acquire) || !c.has(Topic::Triggers) {
                continue;
            }
            match c.reliable.try_send(msg.clone()) {
                Ok(()) => {}
                Err(TrySendError::Full(_)) => c.kill("reliable queue overflow"),
                Err(TrySendError::Disconnected(_)) => c.kill("writer gone"),
            }
        }
    }

    /// Map points (map frame) streamed to clients subscribing to `map`.
    pub fn set_map(&self, points: Vec<[f64; 3]>) {
        *self.shared.map.write().unwrap() = Some(Arc::new(points));
    }

    pub fn client_count(&self) -> usize {
        self.shared.clients.lock().unwrap().iter().filter(|c| c.alive.load(Ordering::Acquire)).count()
    }

    /// Live clients that have sent a Subscribe.
    pub fn subscribed_count(&self) -> usize {
        self.shared
            .clients
            .lock()
            .unwrap()
            .iter()
            .filter(|c| c.alive.load(Ordering::Acquire) && c.subscribed.load(Ordering::Acquire))
            .count()
    }
}

pub struct BridgeServer {
    shared: Arc<Shared>,
    addr: SocketAddr,
    threads: Vec<JoinHandle<()>>,
}

impl BridgeServer {
    pub fn bind(addr: impl ToSocketAddrs + std::fmt::Debug, config: BridgeConfig) -> Result<BridgeServer, BridgeError> {
        let bind_err = |source| BridgeError::Bind { addr: format!("{addr:?}"), source };
        let listener = TcpListener::bind(&addr).map_err(bind_err)?;
        listener.set_nonblocking(true).map_err(bind_err)?;
        let local = listener.local_addr().map_err(bind_err)?;
        let shared = Arc::new(Shared {
            config,
            clients: Mutex::new(Vec::new()),
            current: Mutex::new(Arc::new(BridgeSnapshot::default())),
            map: RwLock::new(None),
            stop: AtomicBool::new(false),
            next_id: AtomicU64::new(1),
        });
        let accept = {
            let shared = Arc::clone(&shared);
            thread::Builder::new().name("bridge-accept".into()).spawn(move || accept_loop(listener, shared)).expect("spawn")
        };
        let publish = {
            let shared = Arc::clone(&shared);
            thread::Builder::new().name("bridge-publish".into()).spawn(move || publish_loop(shared)).expect("spawn")
        };
        info!("bridge listening on {local}");
        Ok(BridgeServer { shared, addr: local, threads: vec![accept, publish] })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn publisher(&self) -> BridgePublisher {
        BridgePublisher { shared: Arc::clone(&self.shared) }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shared.stop.store(true, Ordering::Release);
        for c in self.shared.clients.lock().unwrap().iter() {
            c.kill("server shutdown");
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for BridgeServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    while !shared.stop.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, peer)) => {
                if let Err(e) = register(stream, peer, &shared) {
                    warn!("bridge: failed to set up client {peer}: {e}");
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                warn!("bridge accept error: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

fn register(stream: TcpStream, peer: SocketAddr, shared: &Arc<Shared>) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_write_timeout(Some(shared.config.write_timeout))?;
    let (reliable_tx, reliable_rx) = bounded(shared.config.queue_depth);
    let (control_tx, control_rx) = unbounded();
    let (wake_tx, wake_rx) = bounded(1);
    let client = Arc::new(Client {
        id: shared.next_id.fetch_add(1, Ordering::Relaxed),
        peer,
        stream: stream.try_clone()?,
        topics: AtomicU8::new(0),
        subscribed: AtomicBool::new(false),
        alive: AtomicBool::new(true),
        reliable: reliable_tx,
        control: control_tx,
        wake: wake_tx,
        latest: Mutex::new(None),
    });
    info!("bridge client {} connected from {peer}", client.id);
    let reader_stream = stream.try_clone()?;
    {
        let client = Arc::clone(&client);
        let shared = Arc::clone(shared);
        thread::Builder::new()
            .name(format!("bridge-read-{}", client.id))
            .spawn(move || reader_loop(reader_stream, client, shared))?;
    }
    {
        let client = Arc::clone(&client);
        let shared = Arc::clone(shared);
        thread::Builder::new().name(format!("bridge-write-{}", client.id)).spawn(move || {
            writer_loop(stream, &client, &shared, reliable_rx, control_rx, wake_rx);
        })?;
    }
    shared.clients.lock().unwrap().push(client);
    Ok(())
}

fn reader_loop(mut stream: TcpStream, client: Arc<Client>, shared: Arc<Shared>) {
    while client.alive.load(Ordering::Acquire) {
        match read_frame(&mut stream) {
            Ok(Some(WireMessage::Subscribe { request_id, topics })) => {
                let mut bits = 0u8;
                for t in &topics {
                    match Topic::parse(t) {
                        Some(topic) => bits |= topic.bit(),
                        None => warn!("bridge client {}: ignoring unknown topic {t:?}", client.id),
                    }
                }
                client.topics.store(bits, Ordering::Release);
                client.subscribed.store(true, Ordering::Release);
                let _ = client.control.send(WireMessage::Ack { request_id });
                if bits & Topic::Map.bit() != 0 {
                    stream_map(&client, &shared);
                }
            }
            Ok(Some(other)) => debug!("bridge client {}: ignoring {:?}", client.id, other.tag()),
            Ok(None) => {
                client.kill("peer closed");
                return;
            }
            Err(e) => {
                client.kill(&format!("read error: {e}"));
                return;
            }
        }
    }
}

fn stream_map(client: &Client, shared: &Shared) {
    let Some(points) = shared.map.read().unwrap().clone() else {
        return;
    };
    let conv = shared.config.convention;
    for (k, chunk) in points.chunks(shared.config.map_chunk_points.max(1)).enumerate() {
        let offset = (k * shared.config.map_chunk_points.max(1)) as u64;
        let points = chunk.iter().map(|p| convert_point(p, RendererConvention::MAP, conv)).collect();
        let _ = client.control.send(WireMessage::MapChunk { offset, points });
    }
}

fn writer_loop(
    mut stream: TcpStream,
    client: &Client,
    shared: &Shared,
    reliable: Receiver<WireMessage>,
    control: Receiver<WireMessage>,
    wake: Receiver<()>,
) {
    let conv = shared.config.convention;
    let mut last_heartbeat: Option<Instant> = None;
    let mut shown: BTreeSet<String> = BTreeSet::new();
    let send = |stream: &mut TcpStream, msg: &WireMessage| -> bool {
        if let Err(e) = stream.write_all(&encode(msg)) {
            client.kill(&format!("write error: {e}"));
            return false;
        }
        true
    };
    while client.alive.load(Ordering::Acquire) && !shared.stop.load(Ordering::Acquire) {
        // Control and reliable traffic first, in arrival order.
        while let Ok(m) = control.try_recv() {
            if !send(&mut stream, &m) {
                return;
            }
        }
        while let Ok(m) = reliable.try_recv() {
            if !send(&mut stream, &m) {
                return;
            }
        }
        if client.subscribed.load(Ordering::Acquire)
            && last_heartbeat.map_or(true, |t| t.elapsed() >= shared.config.heartbeat_period)
        {
            let stamp = shared.current.lock().unwrap().stamp;
            last_heartbeat = Some(Instant::now());
            if !send(&mut stream, &WireMessage::Heartbeat { stamp, publish_rate_hz: shared.config.rate_hz }) {
                return;
            }
        }
        select! {
            recv(control) -> m => if let Ok(m) = m { if !send(&mut stream, &m) { return; } },
            recv(reliable) -> m => if let Ok(m) = m { if !send(&mut stream, &m) { return; } },
            recv(wake) -> _ => {
                let Some(snap) = client.latest.lock().unwrap().take() else { continue };
                for m in snapshot_messages(&snap, client, conv, &mut shown) {
                    if !send(&mut stream, &m) {
                        return;
                    }
                }
            },
            default(Duration::from_millis(50)) => {}
        }
    }
}

fn snapshot_messages(
    snap: &BridgeSnapshot,
    client: &Client,
    conv: RendererConvention,
    shown: &mut BTreeSet<String>,
) -> Vec<WireMessage> {
    let mut out = Vec::new();
    if client.has(Topic::Tf) {
        if let Some(v) = &snap.vehicle {
            out.push(WireMessage::TransformUpdate {
                parent: MAP_FRAME.into(),
                child: VEHICLE_FRAME.into(),
                stamp: snap.stamp,
                transform: convert_pose(v, RendererConvention::MAP, conv),
            });
        }
    }
    if client.has(Topic::Agents) {
        // Visible agents every tick; one final `visible = false` when an agent drops out.
        for a in &snap.agents {
            let was_shown = shown.contains(&a.id);
            if a.visible || was_shown {
                out.push(WireMessage::AgentState {
                    agent_id: a.id.clone(),
                    stamp: snap.stamp,
                    pose: convert_pose(&a.pose, RendererConvention::MAP, conv),
                    visible: a.visible,
                });
            }
            if a.visible {
                shown.insert(a.id.clone());
            } else if was_shown {
                shown.remove(&a.id);
            }
        }
    }
    out
}

fn publish_loop(shared: Arc<Shared>) {
    let period = Duration::from_secs_f64(1.0 / shared.config.rate_hz.max(1e-3));
    let mut next = Instant::now();
    while !shared.stop.load(Ordering::Acquire) {
        let now = Instant::now();
        if now < next {
            thread::sleep((next - now).min(Duration::from_millis(20)));
            continue;
        }
        next += period;
        if next < now {
            // fell far behind (suspended process); resynchronize rather than burst
            next = now + period;
        }
        let snap = Arc::clone(&shared.current.lock().unwrap());
        let mut clients = shared.clients.lock().unwrap();
        clients.retain(|c| c.alive.load(Ordering::Acquire));
        for c in clients.iter().filter(|c| c.subscribed.load(Ordering::Acquire)) {
            *c.latest.lock().unwrap() = Some(Arc::clone(&snap));
            let _ = c.wake.try_send(());
        }
    }
}

//! Websocket bridge between the bus and the browser console.
//!
//! Server to client: one JSON text frame per bus message,
//! `{topic, stamp, seq, payload}`. Camera frames are downsampled and sent as
//! base64 thumbnails, at most 10 per second per camera.
//!
//! Client to server: `{"type":"leader_set","arm":0,"angles":[..7],"gripper":g}`
//! drives the UI leader (values are clamped to the leader model limits) and
//! `{"type":"list_episodes"}` is answered with `{"type":"episodes","episodes":[..]}`.
//! Anything else is dropped and counted. Plain HTTP requests get the static page.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use base64::Engine;
use log::{debug, info, warn};
use serde::Deserialize;
use serde_json::{json, Value};
use teleop_core::bus::{Bus, BusMessage, Payload};
use teleop_core::kinematics::{ArmModel, JointVector, JOINT_COUNT};
use teleop_core::recorder::list_episode_dirs;
use teleop_core::session::SessionEvent;
use teleop_core::simdev::UiSetpoints;
use tungstenite::{Message, WebSocket};

pub const INDEX_HTML: &str = include_str!("../static/index.html");

/// Minimum spacing of thumbnails per camera.
pub const THUMBNAIL_PERIOD_NS: u64 = 100_000_000;
/// Pixel stride used to downsample thumbnails.
pub const THUMBNAIL_STRIDE: usize = 2;

const POLL: Duration = Duration::from_millis(5);
const TAP_CAPACITY: usize = 8192;

/// UI-driven leader the bridge may inject into.
#[derive(Clone)]
pub struct LeaderLink {
    pub setpoints: UiSetpoints,
    pub models: [ArmModel; 2],
    /// Pose the leaders start from when a client first drives them.
    pub rest: [JointVector; 2],
}

#[derive(Clone)]
pub struct BridgeConfig {
    pub leader: Option<LeaderLink>,
    pub record_root: PathBuf,
}

#[derive(Default)]
pub struct BridgeMetrics {
    pub malformed: AtomicU64,
    pub injected: AtomicU64,
    pub clients: AtomicU64,
}

pub struct Bridge {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    metrics: Arc<BridgeMetrics>,
    accept: Option<JoinHandle<()>>,
}

impl Bridge {
    /// Bind first so port conflicts surface before anything else starts.
    pub fn bind(addr: impl ToSocketAddrs) -> io::Result<TcpListener> {
        TcpListener::bind(addr)
    }

    pub fn start(listener: TcpListener, bus: Bus, cfg: BridgeConfig) -> io::Result<Self> {
        let addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let stop = Arc::new(AtomicBool::new(false));
        let metrics = Arc::new(BridgeMetrics::default());
        let accept = {
            let stop = stop.clone();
            let metrics = metrics.clone();
            thread::spawn(move || accept_loop(listener, bus, cfg, stop, metrics))
        };
        Ok(Self {
            addr,
            stop,
            metrics,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn metrics(&self) -> &BridgeMetrics {
        &self.metrics
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Bridge {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
    }
}

fn accept_loop(
    listener: TcpListener,
    bus: Bus,
    cfg: BridgeConfig,
    stop: Arc<AtomicBool>,
    metrics: Arc<BridgeMetrics>,
) {
    let mut workers = Vec::new();
    while !stop.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let (bus, cfg, stop, metrics) =
                    (bus.clone(), cfg.clone(), stop.clone(), metrics.clone());
                workers.push(thread::spawn(move || {
                    if let Err(e) = serve_connection(stream, &bus, &cfg, &stop, &metrics) {
                        debug!("bridge client {peer}: {e}");
                    }
                }));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                warn!("bridge accept failed: {e}");
                thread::sleep(POLL);
            }
        }
        workers.retain(|h: &JoinHandle<()>| !h.is_finished());
    }
    for h in workers {
        let _ = h.join();
    }
}

/// Read the request head without consuming it.
fn peek_head(stream: &TcpStream) -> io::Result<String> {
    let mut buf = vec![0u8; 4096];
    for _ in 0..400 {
        let n = stream.peek(&mut buf)?;
        let head = String::from_utf8_lossy(&buf[..n]).into_owned();
        if head.contains("\r\n\r\n") || n == buf.len() {
            return Ok(head);
        }
        if n == 0 {
            break;
        }
        thread::sleep(POLL);
    }
    Err(io::Error::new(io::ErrorKind::InvalidData, "incomplete request head"))
}

fn serve_connection(
    stream: TcpStream,
    bus: &Bus,
    cfg: &BridgeConfig,
    stop: &AtomicBool,
    metrics: &BridgeMetrics,
) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_secs(2)))?;
    let head = peek_head(&stream)?;
    if head.to_ascii_lowercase().contains("upgrade: websocket") {
        let ws = tungstenite::accept(stream).map_err(|e| io::Error::other(e.to_string()))?;
        metrics.clients.fetch_add(1, Ordering::Relaxed);
        serve_websocket(ws, bus, cfg, stop, metrics);
        Ok(())
    } else {
        serve_http(stream, &head)
    }
}

fn serve_http(mut stream: TcpStream, head: &str) -> io::Result<()> {
    let end = head.find("\r\n\r\n").map_or(head.len(), |i| i + 4);
    let mut discard = vec![0u8; end];
    stream.read_exact(&mut discard)?;
    let path = head.split_whitespace().nth(1).unwrap_or("/");
    let (status, ctype, body) = match path {
        "/" | "/index.html" => ("200 OK", "text/html; charset=utf-8", INDEX_HTML),
        _ => ("404 Not Found", "text/plain", "not found\n"),
    };
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: {ctype}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    stream.flush()
}

fn serve_websocket(
    mut ws: WebSocket<TcpStream>,
    bus: &Bus,
    cfg: &BridgeConfig,
    stop: &AtomicBool,
    metrics: &BridgeMetrics,
) {
    let _ = ws.get_mut().set_read_timeout(Some(POLL));
    let tap = bus.tap(TAP_CAPACITY, None);
    let mut throttle = ThumbnailThrottle::default();
    let mut attached = false;
    'outer: while !stop.load(Ordering::Acquire) {
        for m in tap.drain() {
            if let Some(v) = throttle.encode(&m) {
                if ws.send(Message::text(v.to_string())).is_err() {
                    break 'outer;
                }
            }
        }
        match ws.read() {
            Ok(Message::Text(text)) => {
                match handle_client_frame(&text, cfg, &mut attached) {
                    Ok(Some(reply)) => {
                        if ws.send(Message::text(reply.to_string())).is_err() {
                            break;
                        }
                    }
                    Ok(None) => {
                        metrics.injected.fetch_add(1, Ordering::Relaxed);
                    }
                    Err(reason) => {
                        metrics.malformed.fetch_add(1, Ordering::Relaxed);
                        debug!("dropped client frame: {reason}");
                    }
                }
            }
            Ok(Message::Close(_)) => break,
            Ok(Message::Binary(_)) => {
                metrics.malformed.fetch_add(1, Ordering::Relaxed);
            }
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
    }
    if attached {
        if let Some(l) = &cfg.leader {
            l.setpoints.detach();
            info!("console disconnected; leader input detached");
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum ClientFrame {
    LeaderSet {
        arm: usize,
        angles: [f64; JOINT_COUNT],
        gripper: f64,
    },
    ListEpisodes,
}

/// `Ok(None)` for an accepted setpoint, `Ok(Some(reply))` for a query,
/// `Err` for anything that must be dropped.
pub fn handle_client_frame(
    text: &str,
    cfg: &BridgeConfig,
    attached: &mut bool,
) -> Result<Option<Value>, String> {
    let frame: ClientFrame = serde_json::from_str(text).map_err(|e| e.to_string())?;
    match frame {
        ClientFrame::LeaderSet {
            arm,
            angles,
            gripper,
        } => {
            let leader = cfg.leader.as_ref().ok_or("leader is not UI-driven")?;
            if arm >= 2 {
                return Err(format!("arm {arm} out of range"));
            }
            let q = JointVector::new(angles, gripper);
            if !q.is_finite() {
                return Err("non-finite setpoint".into());
            }
            let q = leader.models[arm].clamp_to_limits(&q);
            if !*attached {
                leader.setpoints.attach(leader.rest);
                *attached = true;
            }
            leader.setpoints.set(arm, q);
            Ok(None)
        }
        ClientFrame::ListEpisodes => Ok(Some(json!({
            "type": "episodes",
            "episodes": list_episodes(&cfg.record_root),
        }))),
    }
}

/// Manifest summaries of every episode under `root`, by directory name.
pub fn list_episodes(root: &Path) -> Vec<Value> {
    let Ok(dirs) = list_episode_dirs(root) else {
        return Vec::new();
    };
    dirs.iter()
        .filter_map(|d| {
            let text = std::fs::read_to_string(d.join("manifest.json")).ok()?;
            let m: Value = serde_json::from_str(&text).ok()?;
            Some(json!({
                "path": d.display().to_string(),
                "episode_id": m["episode_id"],
                "status": m["status"],
                "record_count": m["record_count"],
                "wall_clock": m["wall_clock"],
                "labels": {
                    "task": m["task"],
                    "location": m["location"],
                    "operator": m["operator"],
                },
            }))
        })
        .collect()
}

/// Converts bus messages to JSON, rate-limiting camera thumbnails.
#[derive(Default)]
pub struct ThumbnailThrottle {
    last: HashMap<u8, u64>,
}

impl ThumbnailThrottle {
    pub fn encode(&mut self, m: &BusMessage) -> Option<Value> {
        if let Payload::CameraFrame(f) = &m.payload {
            let due = self
                .last
                .get(&f.camera_id)
                .is_none_or(|&t| m.stamp >= t + THUMBNAIL_PERIOD_NS);
            if !due {
                return None;
            }
            self.last.insert(f.camera_id, m.stamp);
        }
        Some(message_json(m))
    }
}

pub fn payload_json(p: &Payload) -> Value {
    match p {
        Payload::JointState(arms) => json!({
            "kind": "joint_state",
            "arms": arms.iter().map(|a| json!({
                "position": a.position,
                "velocity": a.velocity,
                "effort": a.effort,
                "gripper": a.gripper,
            })).collect::<Vec<_>>(),
        }),
        Payload::JointCommand(arms) => json!({
            "kind": "joint_command",
            "arms": arms.iter().map(|a| json!({"angles": a.angles, "gripper": a.gripper})).collect::<Vec<_>>(),
        }),
        Payload::Feedback(f) => json!({
            "kind": "feedback",
            "cause": format!("{:?}", f.cause),
            "magnitudes": f.magnitudes,
        }),
        Payload::CameraFrame(f) => {
            let (w, h, px) = downsample(f.width, f.height, &f.pixels, THUMBNAIL_STRIDE);
            json!({
                "kind": "camera_frame",
                "camera_id": f.camera_id,
                "frame_index": f.frame_index,
                "width": w,
                "height": h,
                "thumbnail": base64::engine::general_purpose::STANDARD.encode(px),
            })
        }
        Payload::SessionEvent(e) => match e {
            SessionEvent::Heartbeat => json!({"kind": "session_event", "event": "heartbeat"}),
            SessionEvent::EpisodeStart { episode_id } => {
                json!({"kind": "session_event", "event": "episode_start", "episode_id": episode_id})
            }
            SessionEvent::EpisodeStop { episode_id } => {
                json!({"kind": "session_event", "event": "episode_stop", "episode_id": episode_id})
            }
            SessionEvent::StateChanged { state } => json!({
                "kind": "session_event",
                "event": "state_changed",
                "state": state.name(),
            }),
        },
    }
}

pub fn message_json(m: &BusMessage) -> Value {
    json!({
        "topic": m.topic.as_str(),
        "stamp": m.stamp,
        "seq": m.seq,
        "payload": payload_json(&m.payload),
    })
}

/// Keep every `stride`-th pixel in each direction of an RGB8 image.
pub fn downsample(width: u16, height: u16, px: &[u8], stride: usize) -> (usize, usize, Vec<u8>) {
    let (w, h) = (width as usize, height as usize);
    let (ow, oh) = (w.div_ceil(stride), h.div_ceil(stride));
    let mut out = Vec::with_capacity(ow * oh * 3);
    for y in (0..h).step_by(stride) {
        for x in (0..w).step_by(stride) {
            let i = (y * w + x) * 3;
            out.extend_from_slice(&px[i..i + 3]);
        }
    }
    (ow, oh, out)
}

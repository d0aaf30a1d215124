//! HTTP and WebSocket surface of the gateway.
//!
//! | route          | purpose                                          |
//! |----------------|--------------------------------------------------|
//! | `GET /frames`  | WebSocket, WireFrame binary messages (`?mode=`)  |
//! | `GET /results` | WebSocket, `PredictionResult` JSON text messages |
//! | `GET /engine`  | WebSocket, engine registration and inference     |
//! | `GET /healthz` | JSON status                                      |
//! | `GET /`        | viewer bundle, when one is installed             |

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::watch;
use tower_http::services::ServeDir;
use tracing::{debug, info, warn};

use super::dispatch::DispatchStats;
use super::registry::{EngineRegistry, EngineStatus, Registration};
use super::results::ResultHub;
use crate::bus::{DeliveryMode, FrameBus, RecvError};
use crate::engine::{EngineDescriptor, HandshakeAck, InferReply};
use crate::supervisor::{ChildStatus, Supervisor};
use crate::wire;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RecorderStatus {
    Off,
    Ok,
    Faulted,
}

/// Everything `/healthz` reports on besides the bus and engines.
#[derive(Default)]
pub struct StatusBoard {
    recorder: Mutex<Option<RecorderStatus>>,
    supervisor: Mutex<Option<Supervisor>>,
    dispatch: Mutex<Option<Arc<DispatchStats>>>,
}

impl StatusBoard {
    pub fn set_recorder(&self, status: RecorderStatus) {
        *self.recorder.lock().unwrap() = Some(status);
    }

    pub fn set_supervisor(&self, supervisor: Supervisor) {
        *self.supervisor.lock().unwrap() = Some(supervisor);
    }

    pub fn set_dispatch(&self, stats: Arc<DispatchStats>) {
        *self.dispatch.lock().unwrap() = Some(stats);
    }
}

#[derive(Clone)]
pub struct GatewayState {
    pub bus: FrameBus,
    pub registry: EngineRegistry,
    pub hub: ResultHub,
    pub status: Arc<StatusBoard>,
    pub viewer_dir: Option<PathBuf>,
    closing: Arc<watch::Sender<bool>>,
}

impl GatewayState {
    pub fn new(bus: FrameBus, registry: EngineRegistry, hub: ResultHub) -> Self {
        GatewayState {
            bus,
            registry,
            hub,
            status: Arc::default(),
            viewer_dir: None,
            closing: Arc::new(watch::channel(false).0),
        }
    }

    /// Asks every engine connection to close. Frame and result streams end
    /// on their own when the bus and hub close.
    pub fn close(&self) {
        self.closing.send_replace(true);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Health {
    pub bus: String,
    pub frames_published: u64,
    pub engines: Vec<EngineHealth>,
    pub recorder: String,
    pub children: Vec<ChildStatus>,
    pub results_published: u64,
    pub frozen: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EngineHealth {
    pub name: String,
    pub state: String,
}

impl From<EngineStatus> for EngineHealth {
    fn from(s: EngineStatus) -> Self {
        EngineHealth {
            name: s.name,
            state: serde_json::to_value(s.state)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
        }
    }
}

pub fn health(state: &GatewayState) -> Health {
    let recorder = state
        .status
        .recorder
        .lock()
        .unwrap()
        .unwrap_or(RecorderStatus::Off);
    Health {
        bus: if state.bus.is_closed() {
            "closed"
        } else {
            "ok"
        }
        .into(),
        frames_published: state.bus.published_count(),
        engines: state
            .registry
            .snapshot()
            .into_iter()
            .map(Into::into)
            .collect(),
        recorder: serde_json::to_value(recorder)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
        children: state
            .status
            .supervisor
            .lock()
            .unwrap()
            .as_ref()
            .map(Supervisor::children)
            .unwrap_or_default(),
        results_published: state.hub.published_count(),
        frozen: state
            .status
            .dispatch
            .lock()
            .unwrap()
            .as_ref()
            .is_some_and(|d| d.freeze_state().frozen),
    }
}

pub fn router(state: GatewayState) -> Router {
    let mut router = Router::new()
        .route("/frames", get(frames_ws))
        .route("/results", get(results_ws))
        .route("/engine", get(engine_ws))
        .route("/healthz", get(healthz));
    router = match &state.viewer_dir {
        Some(dir) if dir.join("index.html").exists() => router.fallback_service(ServeDir::new(dir)),
        _ => router.route("/", get(no_viewer)),
    };
    router.with_state(state)
}

async fn healthz(State(state): State<GatewayState>) -> Json<Health> {
    Json(health(&state))
}

async fn no_viewer() -> Response {
    (StatusCode::NOT_FOUND, "viewer bundle not installed\n").into_response()
}

#[derive(Debug, Deserialize)]
struct FramesQuery {
    mode: Option<DeliveryMode>,
}

async fn frames_ws(
    ws: WebSocketUpgrade,
    Query(q): Query<FramesQuery>,
    State(state): State<GatewayState>,
) -> Response {
    let mode = q.mode.unwrap_or(DeliveryMode::Latest);
    ws.on_upgrade(move |socket| stream_frames(socket, state.bus, mode))
}

async fn stream_frames(mut socket: WebSocket, bus: FrameBus, mode: DeliveryMode) {
    let mut sub = bus.subscribe(mode, None);
    loop {
        tokio::select! {
            item = sub.recv() => match item {
                Ok(frame) => {
                    if socket.send(Message::Binary(wire::encode_frame(&frame))).await.is_err() {
                        break;
                    }
                }
                Err(RecvError::Closed) => {
                    let _ = socket.send(Message::Close(None)).await;
                    break;
                }
                Err(RecvError::Overflow { dropped }) => {
                    warn!(dropped, "frame subscriber overflowed");
                    let _ = socket
                        .send(Message::Close(Some(CloseFrame {
                            code: 1011,
                            reason: format!("overflow: {dropped} frames dropped").into(),
                        })))
                        .await;
                    break;
                }
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}

async fn results_ws(ws: WebSocketUpgrade, State(state): State<GatewayState>) -> Response {
    ws.on_upgrade(move |socket| stream_results(socket, state.hub))
}

async fn stream_results(mut socket: WebSocket, hub: ResultHub) {
    let mut sub = hub.subscribe();
    loop {
        tokio::select! {
            next = sub.next() => match next {
                Some(result) => {
                    let text = serde_json::to_string(&*result).expect("result is serializable");
                    if socket.send(Message::Text(text)).await.is_err() {
                        break;
                    }
                }
                None => {
                    let _ = socket.send(Message::Close(None)).await;
                    break;
                }
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}

async fn engine_ws(ws: WebSocketUpgrade, State(state): State<GatewayState>) -> Response {
    let closing = state.closing.subscribe();
    ws.on_upgrade(move |socket| engine_session(socket, state.registry, closing))
}

async fn reject(mut socket: WebSocket, error: &str, detail: String) {
    let ack = HandshakeAck::Rejected {
        error: error.into(),
        detail,
    };
    let _ = socket
        .send(Message::Text(serde_json::to_string(&ack).unwrap()))
        .await;
    let _ = socket.send(Message::Close(None)).await;
}

async fn closing_requested(rx: &mut watch::Receiver<bool>) {
    let _ = rx.wait_for(|c| *c).await;
}

async fn engine_session(
    mut socket: WebSocket,
    registry: EngineRegistry,
    mut closing: watch::Receiver<bool>,
) {
    let descriptor = loop {
        match socket.recv().await {
            Some(Ok(Message::Text(text))) => match EngineDescriptor::parse(&text) {
                Ok(d) => break d,
                Err(e) => return reject(socket, "MalformedDescriptor", e.to_string()).await,
            },
            Some(Ok(Message::Binary(_))) => {
                return reject(socket, "MalformedDescriptor", "expected JSON text".into()).await
            }
            Some(Ok(_)) => continue,
            _ => return,
        }
    };
    let Registration { link, mut outbound } = match registry.register(descriptor.clone()) {
        Ok(r) => r,
        Err(e) => return reject(socket, "DuplicateName", e.to_string()).await,
    };
    let ack = serde_json::to_string(&HandshakeAck::Registered).unwrap();
    if socket.send(Message::Text(ack)).await.is_err() {
        registry.deregister(&link);
        return;
    }
    info!(engine = %descriptor.name, "engine registered");

    loop {
        tokio::select! {
            request = outbound.recv() => match request {
                Some(bytes) => {
                    if socket.send(Message::Binary(bytes)).await.is_err() {
                        break;
                    }
                }
                None => break,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(text))) => match InferReply::parse(&text) {
                    Ok(reply) => {
                        let id = reply.request_id;
                        if !link.complete(reply) {
                            debug!(engine = %descriptor.name, id, "discarding reply nobody waits for");
                        }
                    }
                    Err(e) => warn!(engine = %descriptor.name, error = %e, "bad reply"),
                },
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            _ = closing_requested(&mut closing) => {
                let _ = socket.send(Message::Close(None)).await;
                break;
            }
        }
    }
    registry.deregister(&link);
    info!(engine = %descriptor.name, "engine disconnected");
}

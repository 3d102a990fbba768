//! Studio backend: a live console that gathers messages from every runtime
//! and agent server, streams them to browsers over WebSocket, bridges human
//! input to `UserAgent`s and lists or stops registered agent servers.
//!
//! Events are kept in a bounded ring for replay; the studio is not a store.

mod input;

use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{broadcast, watch};

pub use input::StudioInput;

use crate::error::{Error, Result};
use crate::msg::Msg;

pub const DEFAULT_RING_CAPACITY: usize = 10_000;

const INDEX_HTML: &str = include_str!("index.html");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Message,
    InputRequest,
    InputResponse,
    ServerStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudioEvent {
    pub seq: u64,
    pub kind: EventKind,
    pub payload: Value,
}

#[derive(Debug, Clone)]
pub struct StudioConfig {
    pub host: String,
    pub port: u16,
    /// Serves `index.html` and assets from here instead of the bundled page.
    pub static_dir: Option<PathBuf>,
    pub ring_capacity: usize,
}

impl Default for StudioConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 0,
            static_dir: None,
            ring_capacity: DEFAULT_RING_CAPACITY,
        }
    }
}

#[derive(Debug, Clone)]
struct InputRequest {
    seq: u64,
    prompt: String,
    agent: Option<String>,
    timeout: Option<f64>,
    response: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
struct ServerEntry {
    server_id: String,
    host: String,
    port: u16,
    status: String,
}

struct Log {
    events: VecDeque<StudioEvent>,
    next_seq: u64,
}

struct Hub {
    log: Mutex<Log>,
    capacity: usize,
    live: broadcast::Sender<StudioEvent>,
    inputs: Mutex<BTreeMap<String, InputRequest>>,
    input_changed: watch::Sender<u64>,
    servers: Mutex<Vec<ServerEntry>>,
    static_dir: Option<PathBuf>,
}

impl Hub {
    /// Appends under the log lock so broadcast order equals seq order.
    fn publish(&self, kind: EventKind, payload: Value) -> u64 {
        let mut log = self.log.lock().unwrap();
        log.next_seq += 1;
        let ev = StudioEvent {
            seq: log.next_seq,
            kind,
            payload,
        };
        if log.events.len() == self.capacity {
            log.events.pop_front();
        }
        log.events.push_back(ev.clone());
        let _ = self.live.send(ev);
        log.next_seq
    }

    fn since(&self, since: u64) -> Vec<StudioEvent> {
        self.log.lock().unwrap().events.iter().filter(|e| e.seq > since).cloned().collect()
    }
}

/// A running studio backend.
pub struct StudioServer {
    host: String,
    port: u16,
    hub: Arc<Hub>,
    stop: watch::Sender<bool>,
    thread: Mutex<Option<JoinHandle<()>>>,
}

impl std::fmt::Debug for StudioServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StudioServer").field("url", &self.url()).finish()
    }
}

impl StudioServer {
    pub fn launch(config: StudioConfig) -> Result<Self> {
        let listener = std::net::TcpListener::bind((config.host.as_str(), config.port)).map_err(|e| {
            Error::Accessibility {
                attempts: 1,
                cause: format!("cannot bind {}:{}: {e}", config.host, config.port),
            }
        })?;
        listener.set_nonblocking(true)?;
        let port = listener.local_addr()?.port();
        let (live, _) = broadcast::channel(1024);
        let hub = Arc::new(Hub {
            log: Mutex::new(Log {
                events: VecDeque::new(),
                next_seq: 0,
            }),
            capacity: config.ring_capacity.max(1),
            live,
            inputs: Mutex::new(BTreeMap::new()),
            input_changed: watch::channel(0).0,
            servers: Mutex::new(Vec::new()),
            static_dir: config.static_dir,
        });
        let (stop, mut stop_rx) = watch::channel(false);
        let app = router(hub.clone());
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let thread = std::thread::Builder::new().name(format!("studio-{port}")).spawn(move || {
            rt.block_on(async move {
                let listener = match tokio::net::TcpListener::from_std(listener) {
                    Ok(l) => l,
                    Err(e) => {
                        eprintln!("studio: {e}");
                        return;
                    }
                };
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async move {
                        let _ = stop_rx.wait_for(|s| *s).await;
                    })
                    .await;
            });
            rt.shutdown_timeout(Duration::from_millis(200));
        })?;
        Ok(Self {
            host: config.host,
            port,
            hub,
            stop,
            thread: Mutex::new(Some(thread)),
        })
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn url(&self) -> String {
        format!("http://{}:{}", self.host, self.port)
    }

    /// Events with `seq > since`, oldest first.
    pub fn events(&self, since: u64) -> Vec<StudioEvent> {
        self.hub.since(since)
    }

    /// Answers a pending input request as the UI would.
    pub fn respond(&self, request_id: &str, content: &str) -> Result<()> {
        match submit_input(&self.hub, request_id, content) {
            Ok(()) => Ok(()),
            Err((_, msg)) => Err(Error::validation(msg)),
        }
    }

    /// Ids of input requests still waiting for a response, oldest first.
    pub fn pending_inputs(&self) -> Vec<String> {
        let inputs = self.hub.inputs.lock().unwrap();
        let mut pending: Vec<(u64, &String)> = inputs
            .iter()
            .filter(|(_, r)| r.response.is_none())
            .map(|(id, r)| (r.seq, id))
            .collect();
        pending.sort();
        pending.into_iter().map(|(_, id)| id.clone()).collect()
    }

    pub fn shutdown(&self) {
        let _ = self.stop.send(true);
        if let Some(t) = self.thread.lock().unwrap().take() {
            let _ = t.join();
        }
    }

    /// Blocks until the studio stops.
    pub fn wait(&self) {
        if let Some(t) = self.thread.lock().unwrap().take() {
            let _ = t.join();
        }
    }
}

impl Drop for StudioServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn err(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({"error": {"message": message.into()}}))).into_response()
}

fn router(hub: Arc<Hub>) -> Router {
    Router::new()
        .route("/", get(index))
        .route("/health", get(|| async { Json(json!({"status": "ok"})) }))
        .route("/api/messages", post(ingest_message))
        .route("/api/events", get(list_events))
        .route("/ws", get(ws_upgrade))
        .route("/api/input_request", post(input_request))
        .route("/api/input_requests", get(list_input_requests))
        .route("/api/input_response", post(input_response))
        .route("/api/input_response/{id}", get(poll_input_response))
        .route("/api/servers", get(list_servers).post(register_server))
        .route("/api/servers/{id}/shutdown", post(shutdown_server))
        .route("/static/{*path}", get(static_file))
        .with_state(hub)
}

async fn index(State(hub): State<Arc<Hub>>) -> Response {
    if let Some(dir) = &hub.static_dir {
        if let Ok(text) = tokio::fs::read_to_string(dir.join("index.html")).await {
            return Html(text).into_response();
        }
    }
    Html(INDEX_HTML).into_response()
}

async fn static_file(State(hub): State<Arc<Hub>>, Path(path): Path<String>) -> Response {
    let Some(dir) = &hub.static_dir else {
        return err(StatusCode::NOT_FOUND, "no static directory configured");
    };
    if path.split('/').any(|seg| seg == ".." || seg.is_empty()) {
        return err(StatusCode::BAD_REQUEST, "invalid path");
    }
    match tokio::fs::read(dir.join(&path)).await {
        Ok(bytes) => {
            let ct = match path.rsplit('.').next() {
                Some("js") => "text/javascript",
                Some("css") => "text/css",
                Some("html") => "text/html",
                Some("svg") => "image/svg+xml",
                Some("png") => "image/png",
                _ => "application/octet-stream",
            };
            ([(axum::http::header::CONTENT_TYPE, ct)], bytes).into_response()
        }
        Err(_) => err(StatusCode::NOT_FOUND, format!("not found: {path}")),
    }
}

/// Accepts `{msg, source}` or a bare message object.
async fn ingest_message(State(hub): State<Arc<Hub>>, body: Option<Json<Value>>) -> Response {
    let Some(Json(body)) = body else {
        return err(StatusCode::BAD_REQUEST, "body must be JSON");
    };
    let (raw, source) = match body.get("msg") {
        Some(m) if m.is_object() => (m.clone(), body.get("source").and_then(Value::as_str).map(str::to_string)),
        _ => (body.clone(), None),
    };
    let msg = match Msg::from_value(&raw) {
        Ok(m) => m,
        Err(e) => return err(StatusCode::BAD_REQUEST, format!("invalid message: {e}")),
    };
    let mut payload = msg.to_value();
    if let (Some(src), Value::Object(o)) = (source, &mut payload) {
        o.insert("source".into(), Value::String(src));
    }
    let seq = hub.publish(EventKind::Message, payload);
    (StatusCode::ACCEPTED, Json(json!({ "seq": seq }))).into_response()
}

#[derive(Deserialize)]
struct SinceQuery {
    since: Option<u64>,
}

async fn list_events(State(hub): State<Arc<Hub>>, Query(q): Query<SinceQuery>) -> Response {
    Json(json!({ "events": hub.since(q.since.unwrap_or(0)) })).into_response()
}

async fn ws_upgrade(State(hub): State<Arc<Hub>>, Query(q): Query<SinceQuery>, ws: WebSocketUpgrade) -> Response {
    let since = q.since.unwrap_or(0);
    ws.on_upgrade(move |socket| stream_events(socket, hub, since))
}

async fn stream_events(mut socket: WebSocket, hub: Arc<Hub>, since: u64) {
    // Subscribe and snapshot under the same lock: nothing is missed or
    // delivered twice.
    let (backlog, mut rx) = {
        let log = hub.log.lock().unwrap();
        let rx = hub.live.subscribe();
        let backlog: Vec<StudioEvent> = log.events.iter().filter(|e| e.seq > since).cloned().collect();
        (backlog, rx)
    };
    let mut last = since;
    for ev in backlog {
        last = ev.seq;
        if send_event(&mut socket, &ev).await.is_err() {
            return;
        }
    }
    loop {
        tokio::select! {
            ev = rx.recv() => match ev {
                Ok(ev) if ev.seq > last => {
                    last = ev.seq;
                    if send_event(&mut socket, &ev).await.is_err() {
                        return;
                    }
                }
                Ok(_) => {}
                Err(broadcast::error::RecvError::Lagged(_)) => {
                    for ev in hub.since(last) {
                        last = ev.seq;
                        if send_event(&mut socket, &ev).await.is_err() {
                            return;
                        }
                    }
                }
                Err(broadcast::error::RecvError::Closed) => return,
            },
            incoming = socket.recv() => match incoming {
                None | Some(Err(_)) | Some(Ok(WsMessage::Close(_))) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}

async fn send_event(socket: &mut WebSocket, ev: &StudioEvent) -> std::result::Result<(), axum::Error> {
    let text = serde_json::to_string(ev).unwrap_or_default();
    socket.send(WsMessage::Text(text.into())).await
}

#[derive(Deserialize)]
struct InputRequestBody {
    request_id: String,
    #[serde(default)]
    prompt: String,
    #[serde(default)]
    agent: Option<String>,
    /// Seconds.
    #[serde(default)]
    timeout: Option<f64>,
}

async fn input_request(State(hub): State<Arc<Hub>>, body: Option<Json<InputRequestBody>>) -> Response {
    let Some(Json(req)) = body else {
        return err(StatusCode::BAD_REQUEST, "expected {request_id, prompt, timeout}");
    };
    {
        let mut inputs = hub.inputs.lock().unwrap();
        if inputs.contains_key(&req.request_id) {
            return err(StatusCode::CONFLICT, format!("duplicate request_id: {}", req.request_id));
        }
        let seq = hub.log.lock().unwrap().next_seq;
        inputs.insert(
            req.request_id.clone(),
            InputRequest {
                seq,
                prompt: req.prompt.clone(),
                agent: req.agent.clone(),
                timeout: req.timeout,
                response: None,
            },
        );
        prune_inputs(&mut inputs, hub.capacity);
    }
    hub.publish(
        EventKind::InputRequest,
        json!({"request_id": req.request_id, "prompt": req.prompt, "agent": req.agent, "timeout": req.timeout}),
    );
    (StatusCode::ACCEPTED, Json(json!({"request_id": req.request_id}))).into_response()
}

async fn list_input_requests(State(hub): State<Arc<Hub>>) -> Response {
    let pending: Vec<Value> = hub
        .inputs
        .lock()
        .unwrap()
        .iter()
        .filter(|(_, r)| r.response.is_none())
        .map(|(id, r)| json!({"request_id": id, "prompt": r.prompt, "agent": r.agent, "timeout": r.timeout}))
        .collect();
    Json(json!({ "requests": pending })).into_response()
}

fn submit_input(hub: &Hub, request_id: &str, content: &str) -> std::result::Result<(), (StatusCode, String)> {
    {
        let mut inputs = hub.inputs.lock().unwrap();
        let Some(req) = inputs.get_mut(request_id) else {
            return Err((StatusCode::NOT_FOUND, format!("unknown request_id: {request_id}")));
        };
        if req.response.is_some() {
            return Err((StatusCode::CONFLICT, format!("request {request_id} was already answered")));
        }
        req.response = Some(content.to_string());
    }
    hub.input_changed.send_modify(|n| *n += 1);
    hub.publish(EventKind::InputResponse, json!({"request_id": request_id, "content": content}));
    Ok(())
}

#[derive(Deserialize)]
struct InputResponseBody {
    request_id: String,
    content: String,
}

async fn input_response(State(hub): State<Arc<Hub>>, body: Option<Json<InputResponseBody>>) -> Response {
    let Some(Json(r)) = body else {
        return err(StatusCode::BAD_REQUEST, "expected {request_id, content}");
    };
    match submit_input(&hub, &r.request_id, &r.content) {
        Ok(()) => Json(json!({"request_id": r.request_id, "status": "accepted"})).into_response(),
        Err((status, msg)) => err(status, msg),
    }
}

#[derive(Deserialize)]
struct WaitQuery {
    wait_ms: Option<u64>,
}

async fn poll_input_response(State(hub): State<Arc<Hub>>, Path(id): Path<String>, Query(q): Query<WaitQuery>) -> Response {
    let lookup = |hub: &Hub| -> Option<Option<String>> { hub.inputs.lock().unwrap().get(&id).map(|r| r.response.clone()) };
    let mut changed = hub.input_changed.subscribe();
    let deadline = tokio::time::Instant::now() + Duration::from_millis(q.wait_ms.unwrap_or(0));
    loop {
        match lookup(&hub) {
            None => return err(StatusCode::NOT_FOUND, format!("unknown request_id: {id}")),
            Some(Some(content)) => return Json(json!({"status": "done", "content": content})).into_response(),
            Some(None) => {
                if tokio::time::timeout_at(deadline, changed.changed()).await.is_err() {
                    return Json(json!({"status": "pending"})).into_response();
                }
            }
        }
    }
}

fn agent_count(host: &str, port: u16) -> Option<usize> {
    let url = format!("http://{host}:{port}/agents");
    match crate::rpc::client::request("GET", &url, None, Duration::from_secs(2)) {
        Ok((200, v)) => v.get("agents").and_then(Value::as_array).map(Vec::len),
        _ => None,
    }
}

async fn list_servers(State(hub): State<Arc<Hub>>) -> Response {
    let entries = hub.servers.lock().unwrap().clone();
    let listed = tokio::task::spawn_blocking(move || {
        entries
            .into_iter()
            .map(|e| {
                let count = if e.status == "stopped" { None } else { agent_count(&e.host, e.port) };
                let status = match (&*e.status, count) {
                    ("stopped", _) => "stopped",
                    (_, Some(_)) => "running",
                    (_, None) => "unreachable",
                };
                json!({
                    "server_id": e.server_id,
                    "host": e.host,
                    "port": e.port,
                    "address": format!("{}:{}", e.host, e.port),
                    "status": status,
                    "agent_count": count,
                })
            })
            .collect::<Vec<Value>>()
    })
    .await
    .unwrap_or_default();
    Json(json!({ "servers": listed })).into_response()
}

#[derive(Deserialize)]
struct RegisterServer {
    host: String,
    port: u16,
}

async fn register_server(State(hub): State<Arc<Hub>>, body: Option<Json<RegisterServer>>) -> Response {
    let Some(Json(r)) = body else {
        return err(StatusCode::BAD_REQUEST, "expected {host, port}");
    };
    let (entry, created) = {
        let mut servers = hub.servers.lock().unwrap();
        match servers.iter_mut().find(|s| s.host == r.host && s.port == r.port) {
            Some(s) => {
                s.status = "running".into();
                (s.clone(), false)
            }
            None => {
                let e = ServerEntry {
                    server_id: format!("s{}", servers.len() + 1),
                    host: r.host,
                    port: r.port,
                    status: "running".into(),
                };
                servers.push(e.clone());
                (e, true)
            }
        }
    };
    hub.publish(EventKind::ServerStatus, serde_json::to_value(&entry).unwrap_or_default());
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    (status, Json(json!({"server_id": entry.server_id}))).into_response()
}

async fn shutdown_server(State(hub): State<Arc<Hub>>, Path(id): Path<String>) -> Response {
    let Some(entry) = hub.servers.lock().unwrap().iter().find(|s| s.server_id == id).cloned() else {
        return err(StatusCode::NOT_FOUND, format!("unknown server: {id}"));
    };
    let result = tokio::task::spawn_blocking(move || crate::rpc::shutdown_server(&entry.host, entry.port)).await;
    match result {
        Ok(Ok(report)) => {
            let entry = {
                let mut servers = hub.servers.lock().unwrap();
                let Some(s) = servers.iter_mut().find(|s| s.server_id == id) else {
                    return err(StatusCode::NOT_FOUND, format!("unknown server: {id}"));
                };
                s.status = "stopped".into();
                s.clone()
            };
            hub.publish(EventKind::ServerStatus, serde_json::to_value(&entry).unwrap_or_default());
            Json(json!({"server_id": id, "status": "stopped", "report": report})).into_response()
        }
        Ok(Err(e)) => err(StatusCode::BAD_GATEWAY, format!("server {id} did not shut down: {e}")),
        Err(e) => err(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

/// Keeps the request table bounded: once it outgrows `capacity`, the oldest
/// answered requests are dropped.
fn prune_inputs(inputs: &mut BTreeMap<String, InputRequest>, capacity: usize) {
    let excess = inputs.len().saturating_sub(capacity);
    if excess == 0 {
        return;
    }
    let mut answered: Vec<(u64, String)> = inputs
        .iter()
        .filter(|(_, r)| r.response.is_some())
        .map(|(k, r)| (r.seq, k.clone()))
        .collect();
    answered.sort();
    for (_, k) in answered.into_iter().take(excess) {
        inputs.remove(&k);
    }
}

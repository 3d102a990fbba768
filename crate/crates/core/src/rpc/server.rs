//! The agent server: per-agent mailboxes behind an HTTP/JSON interface.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::watch;

use super::emitter::StudioEmitter;
use crate::agents::{Agent, AgentConfig};
use crate::error::{Error, ErrorKind, Result, WireError};
use crate::msg::{Message, Msg};
use crate::runtime::Runtime;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub host: String,
    /// 0 picks a free port.
    pub port: u16,
    pub studio_url: Option<String>,
    /// How long shutdown waits for in-flight tasks.
    pub shutdown_grace: Duration,
    /// Drain and stop on SIGINT/SIGTERM.
    pub handle_signals: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 0,
            studio_url: None,
            shutdown_grace: Duration::from_secs(5),
            handle_signals: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShutdownReport {
    /// Tasks that finished (successfully or not) before the server stopped.
    pub completed: usize,
    /// Tasks still running at the end of the grace period.
    pub aborted: Vec<String>,
}

#[derive(Debug, Clone)]
enum TaskState {
    Pending,
    Done(Msg),
    Failed(WireError),
}

enum Job {
    Call { task_id: String, msg: Option<Message> },
    Observe(Message),
}

struct Slot {
    agent: Arc<dyn Agent>,
    class: String,
    mailbox: mpsc::Sender<Job>,
}

struct Shared {
    runtime: Arc<Runtime>,
    agents: Mutex<Vec<(String, Slot)>>,
    tasks: Mutex<HashMap<String, watch::Sender<TaskState>>>,
    accepting: AtomicBool,
    stop: watch::Sender<bool>,
    report: Mutex<Option<ShutdownReport>>,
    grace: Duration,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

impl Shared {
    fn slot<T>(&self, agent_id: &str, f: impl FnOnce(&Slot) -> T) -> Option<T> {
        self.agents.lock().unwrap().iter().find(|(id, _)| id == agent_id).map(|(_, s)| f(s))
    }

    fn finish(&self, task_id: &str, state: TaskState) {
        if let Some(tx) = self.tasks.lock().unwrap().get(task_id) {
            tx.send_if_modified(|s| {
                if matches!(s, TaskState::Pending) {
                    *s = state;
                    true
                } else {
                    false
                }
            });
        }
    }

    fn pending(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .tasks
            .lock()
            .unwrap()
            .iter()
            .filter(|(_, tx)| matches!(*tx.borrow(), TaskState::Pending))
            .map(|(id, _)| id.clone())
            .collect();
        ids.sort();
        ids
    }

    /// Stops intake, waits up to `grace` for running tasks, aborts the rest.
    /// Idempotent: later calls return the first report.
    fn drain(&self, grace: Duration) -> ShutdownReport {
        if let Some(r) = self.report.lock().unwrap().clone() {
            return r;
        }
        self.accepting.store(false, Ordering::SeqCst);
        let deadline = Instant::now() + grace;
        while !self.pending().is_empty() && Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(5));
        }
        let aborted = self.pending();
        for id in &aborted {
            self.finish(
                id,
                TaskState::Failed(WireError {
                    kind: ErrorKind::Aborted,
                    message: format!("task {id} aborted by server shutdown"),
                }),
            );
        }
        let completed = self.tasks.lock().unwrap().len() - aborted.len();
        let report = ShutdownReport { completed, aborted };
        let mut slot = self.report.lock().unwrap();
        if slot.is_none() {
            *slot = Some(report.clone());
            self.agents.lock().unwrap().clear();
            let _ = self.stop.send(true);
        }
        slot.clone().unwrap_or(report)
    }
}

fn worker(agent: Arc<dyn Agent>, rx: mpsc::Receiver<Job>, shared: Arc<Shared>) {
    for job in rx {
        match job {
            Job::Call { task_id, msg } => {
                let state = match agent.reply(msg.as_ref()).and_then(|m| m.to_msg()) {
                    Ok(m) => TaskState::Done(m),
                    Err(e) => TaskState::Failed(WireError::from(&e)),
                };
                shared.finish(&task_id, state);
            }
            Job::Observe(m) => {
                if let Err(e) = agent.observe(&m) {
                    shared.runtime.logger().warning(agent.name(), format!("observe failed: {e}"));
                }
            }
        }
    }
}

/// A running agent server.
pub struct AgentServer {
    host: String,
    port: u16,
    shared: Arc<Shared>,
    thread: Mutex<Option<JoinHandle<()>>>,
}

impl std::fmt::Debug for AgentServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AgentServer").field("addr", &self.addr()).finish()
    }
}

impl AgentServer {
    /// Binds, then serves on a background thread. A busy port fails here.
    pub fn launch(config: ServerConfig, runtime: Arc<Runtime>) -> Result<Self> {
        let listener = std::net::TcpListener::bind((config.host.as_str(), config.port)).map_err(|e| {
            Error::Accessibility {
                attempts: 1,
                cause: format!("cannot bind {}:{}: {e}", config.host, config.port),
            }
        })?;
        listener.set_nonblocking(true)?;
        let port = listener.local_addr()?.port();
        let host = config.host.clone();
        let origin = format!("{host}:{port}");

        if let Some(url) = &config.studio_url {
            runtime.logger().add_sink(StudioEmitter::new(url, origin.clone()));
            let url = format!("{}/api/servers", url.trim_end_matches('/'));
            let body = json!({"host": host, "port": port});
            std::thread::spawn(move || {
                if super::client::request("POST", &url, Some(&body), Duration::from_secs(5)).is_err() {
                    eprintln!("could not register with studio at {url}");
                }
            });
        }

        let (stop, stop_rx) = watch::channel(false);
        let shared = Arc::new(Shared {
            runtime,
            agents: Mutex::new(Vec::new()),
            tasks: Mutex::new(HashMap::new()),
            accepting: AtomicBool::new(true),
            stop,
            report: Mutex::new(None),
            grace: config.shutdown_grace,
            workers: Mutex::new(Vec::new()),
        });
        let app = router(shared.clone());
        let signals = config.handle_signals;
        let sig_shared = shared.clone();
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()?;
        let thread = std::thread::Builder::new()
            .name(format!("agent-server-{port}"))
            .spawn(move || {
                rt.block_on(async move {
                    let listener = match tokio::net::TcpListener::from_std(listener) {
                        Ok(l) => l,
                        Err(e) => {
                            eprintln!("agent server: {e}");
                            return;
                        }
                    };
                    if signals {
                        tokio::spawn(async move {
                            wait_for_signal().await;
                            let s = sig_shared.clone();
                            let grace = s.grace;
                            let _ = tokio::task::spawn_blocking(move || s.drain(grace)).await;
                        });
                    }
                    let mut rx = stop_rx;
                    let _ = axum::serve(listener, app)
                        .with_graceful_shutdown(async move {
                            let _ = rx.wait_for(|stopped| *stopped).await;
                        })
                        .await;
                });
                rt.shutdown_timeout(Duration::from_millis(200));
            })?;
        Ok(Self {
            host,
            port,
            shared,
            thread: Mutex::new(Some(thread)),
        })
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn addr(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }

    /// Drains in-flight tasks (up to `grace`) and stops serving.
    pub fn shutdown(&self, grace: Duration) -> ShutdownReport {
        let report = self.shared.drain(grace);
        self.join();
        report
    }

    /// Blocks until the server stops (via `POST /shutdown`, a signal, or
    /// [`AgentServer::shutdown`]) and returns the shutdown report.
    pub fn wait(&self) -> ShutdownReport {
        self.join();
        self.shared.report.lock().unwrap().clone().unwrap_or(ShutdownReport {
            completed: 0,
            aborted: Vec::new(),
        })
    }

    fn join(&self) {
        if let Some(t) = self.thread.lock().unwrap().take() {
            let _ = t.join();
        }
        let workers: Vec<JoinHandle<()>> = self.shared.workers.lock().unwrap().drain(..).collect();
        for w in workers {
            if w.is_finished() {
                let _ = w.join();
            }
        }
    }
}

impl Drop for AgentServer {
    fn drop(&mut self) {
        if self.thread.lock().unwrap().is_some() {
            self.shutdown(Duration::ZERO);
        }
    }
}

async fn wait_for_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = match signal(SignalKind::terminate()) {
            Ok(s) => s,
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
                return;
            }
        };
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

fn error_response(status: StatusCode, kind: ErrorKind, message: impl Into<String>) -> Response {
    (
        status,
        Json(json!({"error": {"kind": kind, "message": message.into()}})),
    )
        .into_response()
}

fn from_error(e: &Error) -> Response {
    let status = match e.kind() {
        ErrorKind::Validation | ErrorKind::Deserialize => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    let w = WireError::from(e);
    error_response(status, w.kind, w.message)
}

fn unavailable() -> Response {
    error_response(StatusCode::SERVICE_UNAVAILABLE, ErrorKind::Aborted, "server is shutting down")
}

fn unknown_agent(id: &str) -> Response {
    error_response(StatusCode::NOT_FOUND, ErrorKind::Validation, format!("unknown agent: {id}"))
}

fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({"status": "ok"})) }))
        .route("/agents", post(create_agent).get(list_agents))
        .route("/agents/{id}", axum::routing::delete(delete_agent))
        .route("/agents/{id}/call", post(call_agent))
        .route("/agents/{id}/observe", post(observe_agent))
        .route("/agents/{id}/memory", get(agent_memory).delete(clear_memory))
        .route("/tasks/{id}", get(get_task))
        .route("/shutdown", post(shutdown))
        .with_state(shared)
}

async fn create_agent(State(s): State<Arc<Shared>>, body: Option<Json<Value>>) -> Response {
    if !s.accepting.load(Ordering::SeqCst) {
        return unavailable();
    }
    let Some(Json(body)) = body else {
        return error_response(StatusCode::BAD_REQUEST, ErrorKind::Deserialize, "body must be JSON");
    };
    let Some(class) = body.get("agent_class").and_then(Value::as_str) else {
        return error_response(StatusCode::BAD_REQUEST, ErrorKind::Deserialize, "missing field: agent_class");
    };
    let args = body.get("agent_kwargs").and_then(Value::as_object).cloned().unwrap_or_default();
    let cfg = AgentConfig {
        agent_class: class.to_string(),
        args,
    };
    let s2 = s.clone();
    let created = tokio::task::spawn_blocking(move || s2.runtime.create_agent(&cfg)).await;
    let agent = match created {
        Ok(Ok(a)) => a,
        Ok(Err(e)) => return from_error(&e),
        Err(e) => return error_response(StatusCode::INTERNAL_SERVER_ERROR, ErrorKind::Internal, e.to_string()),
    };
    let agent_id = uuid::Uuid::new_v4().to_string();
    let (tx, rx) = mpsc::channel();
    let worker_shared = s.clone();
    let worker_agent = agent.clone();
    let handle = std::thread::Builder::new()
        .name(format!("mailbox-{}", agent.name()))
        .spawn(move || worker(worker_agent, rx, worker_shared));
    match handle {
        Ok(h) => s.workers.lock().unwrap().push(h),
        Err(e) => return error_response(StatusCode::INTERNAL_SERVER_ERROR, ErrorKind::Internal, e.to_string()),
    }
    s.agents.lock().unwrap().push((
        agent_id.clone(),
        Slot {
            agent,
            class: class.to_string(),
            mailbox: tx,
        },
    ));
    (StatusCode::CREATED, Json(json!({ "agent_id": agent_id }))).into_response()
}

async fn list_agents(State(s): State<Arc<Shared>>) -> Response {
    let agents: Vec<Value> = s
        .agents
        .lock()
        .unwrap()
        .iter()
        .map(|(id, slot)| json!({"agent_id": id, "name": slot.agent.name(), "agent_class": slot.class}))
        .collect();
    Json(json!({ "agents": agents })).into_response()
}

async fn delete_agent(State(s): State<Arc<Shared>>, Path(id): Path<String>) -> Response {
    let mut agents = s.agents.lock().unwrap();
    let before = agents.len();
    agents.retain(|(aid, _)| *aid != id);
    if agents.len() == before {
        return unknown_agent(&id);
    }
    StatusCode::NO_CONTENT.into_response()
}

fn parse_msg(body: &Option<Json<Value>>, allow_null: bool) -> std::result::Result<Option<Message>, Response> {
    let bad = |m: String| error_response(StatusCode::BAD_REQUEST, ErrorKind::Deserialize, m);
    let Some(Json(body)) = body else {
        return Err(bad("body must be JSON".into()));
    };
    match body.get("msg") {
        None | Some(Value::Null) if allow_null => Ok(None),
        None | Some(Value::Null) => Err(bad("missing field: msg".into())),
        Some(v) => Message::from_wire(v).map(Some).map_err(|e| bad(e.to_string())),
    }
}

async fn call_agent(State(s): State<Arc<Shared>>, Path(id): Path<String>, body: Option<Json<Value>>) -> Response {
    if !s.accepting.load(Ordering::SeqCst) {
        return unavailable();
    }
    let msg = match parse_msg(&body, true) {
        Ok(m) => m,
        Err(r) => return r,
    };
    let task_id = uuid::Uuid::new_v4().to_string();
    let (tx, _) = watch::channel(TaskState::Pending);
    s.tasks.lock().unwrap().insert(task_id.clone(), tx);
    let sent = s.slot(&id, |slot| {
        slot.mailbox
            .send(Job::Call {
                task_id: task_id.clone(),
                msg,
            })
            .is_ok()
    });
    match sent {
        Some(true) => (StatusCode::ACCEPTED, Json(json!({ "task_id": task_id }))).into_response(),
        Some(false) => {
            s.tasks.lock().unwrap().remove(&task_id);
            unavailable()
        }
        None => {
            s.tasks.lock().unwrap().remove(&task_id);
            unknown_agent(&id)
        }
    }
}

async fn observe_agent(State(s): State<Arc<Shared>>, Path(id): Path<String>, body: Option<Json<Value>>) -> Response {
    if !s.accepting.load(Ordering::SeqCst) {
        return unavailable();
    }
    let msg = match parse_msg(&body, false) {
        Ok(Some(m)) => m,
        Ok(None) => unreachable!("null rejected"),
        Err(r) => return r,
    };
    match s.slot(&id, |slot| slot.mailbox.send(Job::Observe(msg)).is_ok()) {
        Some(true) => StatusCode::NO_CONTENT.into_response(),
        Some(false) => unavailable(),
        None => unknown_agent(&id),
    }
}

async fn agent_memory(State(s): State<Arc<Shared>>, Path(id): Path<String>) -> Response {
    let Some(agent) = s.slot(&id, |slot| slot.agent.clone()) else {
        return unknown_agent(&id);
    };
    match tokio::task::spawn_blocking(move || agent.memory()).await {
        Ok(Ok(mem)) => {
            let mem: Vec<Value> = mem.iter().map(Msg::to_value).collect();
            Json(json!({ "memory": mem })).into_response()
        }
        Ok(Err(e)) => from_error(&e),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, ErrorKind::Internal, e.to_string()),
    }
}

async fn clear_memory(State(s): State<Arc<Shared>>, Path(id): Path<String>) -> Response {
    let Some(agent) = s.slot(&id, |slot| slot.agent.clone()) else {
        return unknown_agent(&id);
    };
    match agent.clear_memory() {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => from_error(&e),
    }
}

#[derive(Deserialize)]
struct WaitQuery {
    wait_ms: Option<u64>,
}

async fn get_task(State(s): State<Arc<Shared>>, Path(id): Path<String>, Query(q): Query<WaitQuery>) -> Response {
    let Some(mut rx) = s.tasks.lock().unwrap().get(&id).map(|tx| tx.subscribe()) else {
        return error_response(StatusCode::NOT_FOUND, ErrorKind::Validation, format!("unknown task: {id}"));
    };
    let wait = Duration::from_millis(q.wait_ms.unwrap_or(0));
    if !wait.is_zero() {
        let _ = tokio::time::timeout(wait, rx.wait_for(|st| !matches!(st, TaskState::Pending))).await;
    }
    let state = rx.borrow().clone();
    let body = match state {
        TaskState::Pending => json!({"status": "pending"}),
        TaskState::Done(m) => json!({"status": "done", "msg": m.to_value()}),
        TaskState::Failed(w) => json!({"status": "error", "error": w}),
    };
    Json(body).into_response()
}

async fn shutdown(State(s): State<Arc<Shared>>, body: Option<Json<Value>>) -> Response {
    let grace = body
        .as_ref()
        .and_then(|Json(b)| b.get("grace_ms"))
        .and_then(Value::as_u64)
        .map(Duration::from_millis)
        .unwrap_or(s.grace);
    let s2 = s.clone();
    match tokio::task::spawn_blocking(move || s2.drain(grace)).await {
        Ok(report) => Json(report).into_response(),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, ErrorKind::Internal, e.to_string()),
    }
}

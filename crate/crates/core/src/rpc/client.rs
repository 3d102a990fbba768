//! HTTP client side: placeholder resolution and remote agent proxies.

use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::server::{AgentServer, ServerConfig};
use crate::agents::{Agent, AgentConfig};
use crate::error::{Error, Result, WireError};
use crate::models::{RetryPolicy, Sleeper, ThreadSleeper};
use crate::msg::{Message, Msg, PlaceholderMsg};
use crate::runtime::Runtime;

/// Longest single long-poll wait; longer resolves poll repeatedly.
pub const MAX_POLL_WAIT: Duration = Duration::from_secs(10);

const REQUEST_TIMEOUT: Duration = Duration::from_secs(30);

fn http() -> &'static ureq::Agent {
    static AGENT: OnceLock<ureq::Agent> = OnceLock::new();
    AGENT.get_or_init(|| {
        ureq::Agent::config_builder()
            .http_status_as_error(false)
            .max_idle_connections_per_host(64)
            .build()
            .into()
    })
}

/// Sends one request. Transport failures are accessibility errors; any
/// HTTP status is returned with the parsed body (`null` when empty).
pub(crate) fn request(method: &str, url: &str, body: Option<&Value>, timeout: Duration) -> Result<(u16, Value)> {
    let unreachable = |e: ureq::Error| Error::Accessibility {
        attempts: 1,
        cause: format!("{method} {url}: {e}"),
    };
    let timeout = Some(timeout);
    let resp = match (method, body) {
        ("GET", _) => http().get(url).config().timeout_global(timeout).build().call(),
        ("DELETE", _) => http().delete(url).config().timeout_global(timeout).build().call(),
        (_, Some(b)) => http().post(url).config().timeout_global(timeout).build().send_json(b),
        (_, None) => http().post(url).config().timeout_global(timeout).build().send_empty(),
    };
    let mut resp = resp.map_err(unreachable)?;
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().map_err(unreachable)?;
    let value = if text.trim().is_empty() {
        Value::Null
    } else {
        serde_json::from_str(&text).unwrap_or(Value::String(text))
    };
    Ok((status, value))
}

fn error_body(url: &str, status: u16, body: &Value) -> Error {
    if let Ok(w) = serde_json::from_value::<WireError>(body["error"].clone()) {
        return w.into();
    }
    Error::Unresolvable(format!("{url}: HTTP {status}: {body}"))
}

/// Long-polls a server until the task completes or `timeout` passes.
///
/// A task that failed on the server re-raises its error with the original
/// classification.
pub fn fetch_task(host: &str, port: u16, task_id: &str, timeout: Duration) -> Result<Msg> {
    let deadline = Instant::now() + timeout;
    loop {
        let wait = deadline.saturating_duration_since(Instant::now()).min(MAX_POLL_WAIT);
        let url = format!("http://{host}:{port}/tasks/{task_id}?wait_ms={}", wait.as_millis());
        let (status, body) = request("GET", &url, None, wait + REQUEST_TIMEOUT)?;
        if status != 200 {
            return Err(error_body(&url, status, &body));
        }
        match body["status"].as_str() {
            Some("done") => return Msg::from_value(&body["msg"]),
            Some("error") => {
                let w: WireError = serde_json::from_value(body["error"].clone())
                    .map_err(|e| Error::Deserialize(format!("task error body: {e}")))?;
                return Err(w.into());
            }
            Some("pending") if Instant::now() >= deadline => {
                return Err(Error::Timeout(format!(
                    "task {task_id} on {host}:{port} not done within {:.3}s",
                    timeout.as_secs_f64()
                )))
            }
            Some("pending") => continue,
            _ => return Err(Error::Deserialize(format!("{url}: unexpected body {body}"))),
        }
    }
}

/// Server liveness check.
pub fn health(host: &str, port: u16) -> Result<bool> {
    let (status, body) = request("GET", &format!("http://{host}:{port}/health"), None, Duration::from_secs(5))?;
    Ok(status == 200 && body["status"] == "ok")
}

/// Asks a server to drain and stop; returns its shutdown report.
pub fn shutdown_server(host: &str, port: u16) -> Result<Value> {
    let url = format!("http://{host}:{port}/shutdown");
    let (status, body) = request("POST", &url, None, Duration::from_secs(60))?;
    if status != 200 {
        return Err(error_body(&url, status, &body));
    }
    Ok(body)
}

/// Where a distributed agent should live.
#[derive(Debug, Clone)]
pub enum DistTarget {
    /// An already running server.
    Server { host: String, port: u16 },
    /// A fresh server on a free port inside this process, stopped when the
    /// last proxy using it is dropped.
    InProcess,
    /// A fresh `agentmesh server` child process on a free port, killed when
    /// the last proxy using it is dropped.
    Subprocess { program: std::path::PathBuf },
}

/// A server started for one or more proxies.
pub struct LaunchedServer {
    host: String,
    port: u16,
    kind: Launched,
}

enum Launched {
    InProcess(AgentServer),
    Child(std::sync::Mutex<std::process::Child>),
}

impl LaunchedServer {
    pub fn in_process(runtime: Arc<Runtime>) -> Result<Arc<Self>> {
        let server = AgentServer::launch(ServerConfig::default(), runtime.child())?;
        Ok(Arc::new(Self {
            host: server.host().to_string(),
            port: server.port(),
            kind: Launched::InProcess(server),
        }))
    }

    /// Spawns `program server --port 0` and reads the bound port from its
    /// first stdout line (`listening on HOST:PORT`).
    pub fn subprocess(program: &std::path::Path) -> Result<Arc<Self>> {
        use std::io::BufRead;
        let mut child = std::process::Command::new(program)
            .args(["server", "--host", "127.0.0.1", "--port", "0"])
            .stdout(std::process::Stdio::piped())
            .stderr(std::process::Stdio::null())
            .spawn()
            .map_err(|e| Error::Accessibility {
                attempts: 1,
                cause: format!("cannot spawn {}: {e}", program.display()),
            })?;
        let stdout = child.stdout.take().ok_or_else(|| Error::Internal("child has no stdout".into()))?;
        let mut line = String::new();
        std::io::BufReader::new(stdout).read_line(&mut line)?;
        let addr = line.trim().strip_prefix("listening on ").unwrap_or_default().to_string();
        let Some((host, port)) = addr.rsplit_once(':').and_then(|(h, p)| Some((h.to_string(), p.parse().ok()?))) else {
            let _ = child.kill();
            return Err(Error::Accessibility {
                attempts: 1,
                cause: format!("server subprocess did not report its address: {line:?}"),
            });
        };
        Ok(Arc::new(Self {
            host,
            port,
            kind: Launched::Child(std::sync::Mutex::new(child)),
        }))
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn port(&self) -> u16 {
        self.port
    }
}

impl Drop for LaunchedServer {
    fn drop(&mut self) {
        match &self.kind {
            Launched::InProcess(server) => {
                server.shutdown(Duration::from_secs(1));
            }
            Launched::Child(child) => {
                let _ = shutdown_server(&self.host, self.port);
                let mut c = child.lock().unwrap();
                if !matches!(c.try_wait(), Ok(Some(_))) {
                    std::thread::sleep(Duration::from_millis(50));
                    let _ = c.kill();
                }
                let _ = c.wait();
            }
        }
    }
}

/// Local stand-in for an agent hosted on a server.
///
/// `reply` returns a placeholder as soon as the server has queued the call.
/// Placeholder inputs are forwarded unresolved; the server resolves them.
pub struct RemoteAgent {
    name: String,
    host: String,
    port: u16,
    agent_id: String,
    config: AgentConfig,
    retry: RetryPolicy,
    sleeper: Arc<dyn Sleeper>,
    _server: Option<Arc<LaunchedServer>>,
}

impl std::fmt::Debug for RemoteAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteAgent")
            .field("name", &self.name)
            .field("addr", &format!("{}:{}", self.host, self.port))
            .field("agent_id", &self.agent_id)
            .finish()
    }
}

fn with_retry<T>(retry: &RetryPolicy, sleeper: &dyn Sleeper, mut f: impl FnMut() -> Result<T>) -> Result<T> {
    let total = retry.max_retries + 1;
    let mut last = String::new();
    for attempt in 1..=total {
        match f() {
            Err(Error::Accessibility { cause, .. }) => {
                last = cause;
                if attempt < total {
                    sleeper.sleep(retry.backoff(attempt));
                }
            }
            other => return other,
        }
    }
    Err(Error::Accessibility {
        attempts: total,
        cause: last,
    })
}

impl RemoteAgent {
    /// Creates the agent on the server at `host:port`.
    pub fn create(
        config: AgentConfig,
        host: &str,
        port: u16,
        retry: RetryPolicy,
        sleeper: Arc<dyn Sleeper>,
    ) -> Result<Self> {
        let name = config
            .name()
            .ok_or_else(|| Error::validation("agent config has no name"))?
            .to_string();
        let url = format!("http://{host}:{port}/agents");
        let body = json!({"agent_class": config.agent_class, "agent_kwargs": config.args});
        let (status, resp) = with_retry(&retry, sleeper.as_ref(), || request("POST", &url, Some(&body), REQUEST_TIMEOUT))?;
        if status != 201 {
            return Err(error_body(&url, status, &resp));
        }
        let agent_id = resp["agent_id"]
            .as_str()
            .ok_or_else(|| Error::Deserialize("create response missing field: agent_id".into()))?
            .to_string();
        Ok(Self {
            name,
            host: host.to_string(),
            port,
            agent_id,
            config,
            retry,
            sleeper,
            _server: None,
        })
    }

    pub fn agent_id(&self) -> &str {
        &self.agent_id
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    fn url(&self, tail: &str) -> String {
        format!("http://{}:{}/agents/{}{tail}", self.host, self.port, self.agent_id)
    }

    fn post(&self, tail: &str, body: &Value, expect: u16) -> Result<Value> {
        let url = self.url(tail);
        let (status, resp) = with_retry(&self.retry, self.sleeper.as_ref(), || {
            request("POST", &url, Some(body), REQUEST_TIMEOUT)
        })?;
        if status != expect {
            return Err(error_body(&url, status, &resp));
        }
        Ok(resp)
    }
}

impl Agent for RemoteAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn reply(&self, x: Option<&Message>) -> Result<Message> {
        let msg = x.map(Message::to_wire).unwrap_or(Value::Null);
        let resp = self.post("/call", &json!({ "msg": msg }), 202)?;
        let task_id = resp["task_id"]
            .as_str()
            .ok_or_else(|| Error::Deserialize("call response missing field: task_id".into()))?;
        Ok(PlaceholderMsg::new(task_id, self.host.clone(), self.port)?.into())
    }

    fn observe(&self, x: &Message) -> Result<()> {
        self.post("/observe", &json!({ "msg": x.to_wire() }), 204).map(|_| ())
    }

    fn memory(&self) -> Result<Vec<Msg>> {
        let url = self.url("/memory");
        let (status, resp) = request("GET", &url, None, REQUEST_TIMEOUT)?;
        if status != 200 {
            return Err(error_body(&url, status, &resp));
        }
        resp["memory"]
            .as_array()
            .ok_or_else(|| Error::Deserialize("memory response missing field: memory".into()))?
            .iter()
            .map(Msg::from_value)
            .collect()
    }

    fn clear_memory(&self) -> Result<()> {
        let url = self.url("/memory");
        let (status, resp) = request("DELETE", &url, None, REQUEST_TIMEOUT)?;
        if status != 204 {
            return Err(error_body(&url, status, &resp));
        }
        Ok(())
    }

    fn config(&self) -> Option<AgentConfig> {
        Some(self.config.clone())
    }
}

/// Moves an agent (or just its config) to a server and returns the proxy.
///
/// The agent must report an [`AgentConfig`]; the server rebuilds it from the
/// class name and arguments, including any inline model config.
pub fn to_dist(agent: &dyn Agent, target: DistTarget, runtime: &Arc<Runtime>) -> Result<RemoteAgent> {
    let config = agent
        .config()
        .ok_or_else(|| Error::validation(format!("agent '{}' cannot be distributed: no config", agent.name())))?;
    config_to_dist(config, target, runtime)
}

pub fn config_to_dist(config: AgentConfig, target: DistTarget, runtime: &Arc<Runtime>) -> Result<RemoteAgent> {
    let (launched, host, port) = match target {
        DistTarget::Server { host, port } => (None, host, port),
        DistTarget::InProcess => {
            let s = LaunchedServer::in_process(runtime.clone())?;
            let (h, p) = (s.host().to_string(), s.port());
            (Some(s), h, p)
        }
        DistTarget::Subprocess { program } => {
            let s = LaunchedServer::subprocess(&program)?;
            let (h, p) = (s.host().to_string(), s.port());
            (Some(s), h, p)
        }
    };
    let mut proxy = RemoteAgent::create(config, &host, port, runtime.retry_policy(), runtime.sleeper())?;
    proxy._server = launched;
    Ok(proxy)
}

/// Creates an agent on a server that another proxy already launched.
pub fn to_dist_alongside(agent: &dyn Agent, peer: &RemoteAgent, runtime: &Arc<Runtime>) -> Result<RemoteAgent> {
    let config = agent
        .config()
        .ok_or_else(|| Error::validation(format!("agent '{}' cannot be distributed: no config", agent.name())))?;
    let mut proxy = RemoteAgent::create(config, &peer.host, peer.port, runtime.retry_policy(), runtime.sleeper())?;
    proxy._server = peer._server.clone();
    Ok(proxy)
}

impl RemoteAgent {
    /// Default retry for proxies created outside a runtime.
    pub fn default_retry() -> (RetryPolicy, Arc<dyn Sleeper>) {
        (RetryPolicy::default(), Arc::new(ThreadSleeper))
    }
}

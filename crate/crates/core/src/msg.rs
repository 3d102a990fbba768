//! Message data model.
//!
//! [`Msg`] is the unit of inter-agent communication. A [`PlaceholderMsg`] is
//! the deferred form returned by a distributed call; [`Message`] is what
//! agents pass around and can be either.

use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicI64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use chrono::{TimeZone, Utc};
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Marker key of the placeholder wire form.
pub const PLACEHOLDER_MARKER: &str = "__placeholder__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Role {
    System,
    User,
    #[default]
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s {
            "system" => Some(Role::System),
            "user" => Some(Role::User),
            "assistant" => Some(Role::Assistant),
            _ => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Role {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Role {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Role::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("malformed field: role ({s:?})")))
    }
}

static LAST_MILLIS: AtomicI64 = AtomicI64::new(0);
static ID_RNG: Mutex<Option<ChaCha8Rng>> = Mutex::new(None);
static LOGICAL_CLOCK: AtomicBool = AtomicBool::new(false);

/// Start of the logical clock used after [`seed_ids`]: 2024-01-01T00:00:00Z.
const LOGICAL_EPOCH_MILLIS: i64 = 1_704_067_200_000;

/// Makes message ids and timestamps reproducible for the rest of the
/// process. Timestamps switch to a logical clock that starts at a fixed
/// epoch and advances one millisecond per message.
pub fn seed_ids(seed: u64) {
    *ID_RNG.lock().unwrap() = Some(ChaCha8Rng::seed_from_u64(seed));
    LAST_MILLIS.store(LOGICAL_EPOCH_MILLIS - 1, Ordering::SeqCst);
    LOGICAL_CLOCK.store(true, Ordering::SeqCst);
}

fn next_id() -> String {
    let mut guard = ID_RNG.lock().unwrap();
    match guard.as_mut() {
        Some(rng) => {
            let mut bytes = [0u8; 16];
            rng.fill_bytes(&mut bytes);
            uuid::Builder::from_random_bytes(bytes).into_uuid().to_string()
        }
        None => uuid::Uuid::new_v4().to_string(),
    }
}

/// Millisecond UTC timestamp, clamped to never go backwards within the process.
fn next_timestamp() -> String {
    let millis = if LOGICAL_CLOCK.load(Ordering::SeqCst) {
        LAST_MILLIS.fetch_add(1, Ordering::SeqCst) + 1
    } else {
        let now = Utc::now().timestamp_millis();
        now.max(LAST_MILLIS.fetch_max(now, Ordering::SeqCst))
    };
    Utc.timestamp_millis_opt(millis)
        .single()
        .expect("valid millis")
        .format("%Y-%m-%dT%H:%M:%S%.3fZ")
        .to_string()
}

/// A resolved message.
#[derive(Debug, Clone, PartialEq)]
pub struct Msg {
    id: String,
    timestamp: String,
    name: String,
    role: Role,
    content: String,
    url: Option<String>,
    metadata: Map<String, Value>,
}

/// Builder returned by [`Msg::builder`].
#[derive(Debug, Clone)]
pub struct MsgBuilder {
    name: String,
    content: String,
    role: Role,
    url: Option<String>,
    metadata: Map<String, Value>,
}

impl MsgBuilder {
    pub fn role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn url(mut self, url: impl Into<String>) -> Self {
        self.url = Some(url.into());
        self
    }

    pub fn maybe_url(mut self, url: Option<String>) -> Self {
        self.url = url;
        self
    }

    pub fn metadata(mut self, metadata: Map<String, Value>) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn meta(mut self, key: impl Into<String>, value: Value) -> Self {
        self.metadata.insert(key.into(), value);
        self
    }

    pub fn build(self) -> Result<Msg> {
        if self.name.is_empty() {
            return Err(Error::validation("message name must be non-empty"));
        }
        Ok(Msg {
            id: next_id(),
            timestamp: next_timestamp(),
            name: self.name,
            role: self.role,
            content: self.content,
            url: self.url,
            metadata: self.metadata,
        })
    }
}

impl Msg {
    /// `Msg::new("Alice", "Hello!")` with role `assistant`.
    pub fn new(name: impl Into<String>, content: impl Into<String>) -> Result<Msg> {
        Self::builder(name, content).build()
    }

    pub fn builder(name: impl Into<String>, content: impl Into<String>) -> MsgBuilder {
        MsgBuilder {
            name: name.into(),
            content: content.into(),
            role: Role::default(),
            url: None,
            metadata: Map::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn timestamp(&self) -> &str {
        &self.timestamp
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn content(&self) -> &str {
        &self.content
    }

    pub fn url(&self) -> Option<&str> {
        self.url.as_deref()
    }

    pub fn metadata(&self) -> &Map<String, Value> {
        &self.metadata
    }

    pub fn get_meta(&self, key: &str) -> Option<&Value> {
        self.metadata.get(key)
    }

    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("content".into(), Value::String(self.content.clone()));
        m.insert("id".into(), Value::String(self.id.clone()));
        m.insert("metadata".into(), Value::Object(self.metadata.clone()));
        m.insert("name".into(), Value::String(self.name.clone()));
        m.insert("role".into(), Value::String(self.role.as_str().into()));
        m.insert("timestamp".into(), Value::String(self.timestamp.clone()));
        m.insert(
            "url".into(),
            self.url.clone().map(Value::String).unwrap_or(Value::Null),
        );
        canonicalize(Value::Object(m))
    }

    /// Sorted-key, whitespace-free JSON.
    pub fn to_json(&self) -> String {
        self.to_value().to_string()
    }

    /// Canonical JSON without `id` and `timestamp`; equal for messages that
    /// carry the same conversational payload.
    pub fn body_json(&self) -> String {
        let mut v = self.to_value();
        if let Value::Object(m) = &mut v {
            m.remove("id");
            m.remove("timestamp");
        }
        v.to_string()
    }

    pub fn from_json(s: &str) -> Result<Msg> {
        let v: Value = serde_json::from_str(s).map_err(|e| Error::Deserialize(format!("invalid JSON: {e}")))?;
        Self::from_value(&v)
    }

    pub fn from_value(v: &Value) -> Result<Msg> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Deserialize("message must be a JSON object".into()))?;
        let req_str = |key: &str| -> Result<String> {
            match obj.get(key) {
                None | Some(Value::Null) => Err(Error::Deserialize(format!("missing field: {key}"))),
                Some(Value::String(s)) => Ok(s.clone()),
                Some(_) => Err(Error::Deserialize(format!("malformed field: {key}"))),
            }
        };
        let name = req_str("name")?;
        if name.is_empty() {
            return Err(Error::Deserialize("malformed field: name (empty)".into()));
        }
        let content = req_str("content")?;
        let role = match obj.get("role") {
            None | Some(Value::Null) => Role::default(),
            Some(Value::String(s)) => {
                Role::parse(s).ok_or_else(|| Error::Deserialize(format!("malformed field: role ({s:?})")))?
            }
            Some(_) => return Err(Error::Deserialize("malformed field: role".into())),
        };
        let id = req_str("id")?;
        let timestamp = req_str("timestamp")?;
        let url = match obj.get("url") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => return Err(Error::Deserialize("malformed field: url".into())),
        };
        let metadata = match obj.get("metadata") {
            None | Some(Value::Null) => Map::new(),
            Some(Value::Object(m)) => m.clone(),
            Some(_) => return Err(Error::Deserialize("malformed field: metadata".into())),
        };
        Ok(Msg {
            id,
            timestamp,
            name,
            role,
            content,
            url,
            metadata,
        })
    }
}

impl fmt::Display for Msg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.name, self.content)
    }
}

impl Serialize for Msg {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_value().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Msg {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Msg::from_value(&v).map_err(serde::de::Error::custom)
    }
}

/// Rebuilds every object with lexicographically sorted keys.
pub fn canonicalize(v: Value) -> Value {
    match v {
        Value::Object(m) => {
            let mut entries: Vec<(String, Value)> = m.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, canonicalize(v))).collect())
        }
        Value::Array(a) => Value::Array(a.into_iter().map(canonicalize).collect()),
        other => other,
    }
}

/// A deferred message living on an agent server.
///
/// Resolution is performed at most once; concurrent resolvers wait on the
/// same fetch.
#[derive(Debug)]
pub struct PlaceholderMsg {
    task_id: String,
    host: String,
    port: u16,
    resolved: OnceLock<Msg>,
    fetch: Mutex<()>,
}

/// Default wait used by implicit field access on an unresolved placeholder.
pub const DEFAULT_RESOLVE_TIMEOUT: Duration = Duration::from_secs(300);

impl PlaceholderMsg {
    pub fn new(task_id: impl Into<String>, host: impl Into<String>, port: u16) -> Result<Self> {
        if port == 0 {
            return Err(Error::validation("placeholder port must be in 1..=65535"));
        }
        Ok(Self {
            task_id: task_id.into(),
            host: host.into(),
            port,
            resolved: OnceLock::new(),
            fetch: Mutex::new(()),
        })
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn resolved(&self) -> Option<&Msg> {
        self.resolved.get()
    }

    pub fn is_resolved(&self) -> bool {
        self.resolved.get().is_some()
    }

    /// Blocks until the owning server reports the task done.
    pub fn resolve(&self, timeout: Duration) -> Result<&Msg> {
        if let Some(m) = self.resolved.get() {
            return Ok(m);
        }
        let _guard = self.fetch.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(m) = self.resolved.get() {
            return Ok(m);
        }
        let msg = crate::rpc::client::fetch_task(&self.host, self.port, &self.task_id, timeout)?;
        Ok(self.resolved.get_or_init(|| msg))
    }

    pub fn content(&self) -> Result<&str> {
        Ok(self.resolve(DEFAULT_RESOLVE_TIMEOUT)?.content())
    }

    pub fn name(&self) -> Result<&str> {
        Ok(self.resolve(DEFAULT_RESOLVE_TIMEOUT)?.name())
    }

    pub fn url(&self) -> Result<Option<&str>> {
        Ok(self.resolve(DEFAULT_RESOLVE_TIMEOUT)?.url())
    }

    pub fn to_value(&self) -> Value {
        serde_json::json!({
            PLACEHOLDER_MARKER: true,
            "host": self.host,
            "port": self.port,
            "task_id": self.task_id,
        })
    }

    pub fn to_json(&self) -> String {
        self.to_value().to_string()
    }

    pub fn from_value(v: &Value) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Deserialize("placeholder must be a JSON object".into()))?;
        if obj.get(PLACEHOLDER_MARKER) != Some(&Value::Bool(true)) {
            return Err(Error::Deserialize(format!("missing field: {PLACEHOLDER_MARKER}")));
        }
        let task_id = obj
            .get("task_id")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Deserialize("missing field: task_id".into()))?;
        let host = obj
            .get("host")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Deserialize("missing field: host".into()))?;
        let port = obj
            .get("port")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Deserialize("missing field: port".into()))?;
        if !(1..=65535).contains(&port) {
            return Err(Error::Deserialize(format!("malformed field: port ({port})")));
        }
        Self::new(task_id, host, port as u16)
    }
}

impl PartialEq for PlaceholderMsg {
    fn eq(&self, other: &Self) -> bool {
        self.task_id == other.task_id && self.host == other.host && self.port == other.port
    }
}

/// A message as seen by agents: either resolved or pending on a server.
#[derive(Debug, Clone)]
pub enum Message {
    Ready(Msg),
    Pending(Arc<PlaceholderMsg>),
}

impl Message {
    /// The resolved message, blocking on a placeholder if necessary.
    pub fn get(&self) -> Result<&Msg> {
        match self {
            Message::Ready(m) => Ok(m),
            Message::Pending(p) => p.resolve(DEFAULT_RESOLVE_TIMEOUT),
        }
    }

    pub fn resolve(&self, timeout: Duration) -> Result<&Msg> {
        match self {
            Message::Ready(m) => Ok(m),
            Message::Pending(p) => p.resolve(timeout),
        }
    }

    pub fn content(&self) -> Result<&str> {
        Ok(self.get()?.content())
    }

    pub fn name(&self) -> Result<&str> {
        Ok(self.get()?.name())
    }

    pub fn url(&self) -> Result<Option<&str>> {
        Ok(self.get()?.url())
    }

    pub fn is_placeholder(&self) -> bool {
        matches!(self, Message::Pending(_))
    }

    /// Owned copy of the resolved message.
    pub fn to_msg(&self) -> Result<Msg> {
        self.get().cloned()
    }

    /// Wire form: a full message, or the placeholder coordinates when still
    /// unresolved.
    pub fn to_wire(&self) -> Value {
        match self {
            Message::Ready(m) => m.to_value(),
            Message::Pending(p) => match p.resolved() {
                Some(m) => m.to_value(),
                None => p.to_value(),
            },
        }
    }

    pub fn from_wire(v: &Value) -> Result<Message> {
        if v.get(PLACEHOLDER_MARKER).is_some() {
            Ok(Message::Pending(Arc::new(PlaceholderMsg::from_value(v)?)))
        } else {
            Ok(Message::Ready(Msg::from_value(v)?))
        }
    }
}

impl From<Msg> for Message {
    fn from(m: Msg) -> Self {
        Message::Ready(m)
    }
}

impl From<PlaceholderMsg> for Message {
    fn from(p: PlaceholderMsg) -> Self {
        Message::Pending(Arc::new(p))
    }
}

//! Leveled logging with a `Chat` level for conversation messages.
//!
//! Chat records carry the full message. Sinks decide how to render it: the
//! human sink prints `name: content` with a per-agent color and glyph, the
//! JSONL sink writes the message JSON plus `level` and `source`.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::Result;
use crate::msg::{canonicalize, Msg};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LogLevel {
    Debug,
    Info,
    Chat,
    Warning,
    Error,
}

impl LogLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Debug => "DEBUG",
            Self::Info => "INFO",
            Self::Chat => "CHAT",
            Self::Warning => "WARNING",
            Self::Error => "ERROR",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DEBUG" => Some(Self::Debug),
            "INFO" => Some(Self::Info),
            "CHAT" => Some(Self::Chat),
            "WARNING" | "WARN" => Some(Self::Warning),
            "ERROR" => Some(Self::Error),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub level: LogLevel,
    pub source: String,
    pub msg: Option<Msg>,
    pub text: String,
}

impl LogRecord {
    /// JSONL form: the message schema plus `level` and `source`, or
    /// `{level, source, text}` for plain records.
    pub fn to_json_line(&self) -> String {
        let mut obj = match &self.msg {
            Some(m) => match m.to_value() {
                Value::Object(o) => o,
                _ => Map::new(),
            },
            None => {
                let mut o = Map::new();
                o.insert("text".into(), Value::String(self.text.clone()));
                o
            }
        };
        obj.insert("level".into(), Value::String(self.level.as_str().into()));
        obj.insert("source".into(), Value::String(self.source.clone()));
        canonicalize(Value::Object(obj)).to_string()
    }
}

pub trait LogSink: Send + Sync {
    fn write(&self, record: &LogRecord);
}

const PALETTE: [u8; 8] = [31, 32, 33, 34, 35, 36, 91, 94];
const GLYPHS: [&str; 8] = ["**", "##", "++", "%%", "&&", "$$", "~~", "=="];

/// Display color (ANSI code) and two-character glyph of an agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgentStyle {
    pub color: u8,
    pub glyph: &'static str,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Style slot for `name` when no other agent has claimed it.
pub fn agent_style(name: &str) -> AgentStyle {
    let slot = (fnv1a(name) % PALETTE.len() as u64) as usize;
    AgentStyle {
        color: PALETTE[slot],
        glyph: GLYPHS[slot],
    }
}

/// Hash-based slot assignment, linearly probed so that agents seen in one
/// run get distinct slots while the palette lasts.
#[derive(Debug, Default)]
struct StyleAssigner {
    assigned: HashMap<String, usize>,
    taken: Vec<bool>,
}

impl StyleAssigner {
    fn style(&mut self, name: &str) -> AgentStyle {
        if self.taken.is_empty() {
            self.taken = vec![false; PALETTE.len()];
        }
        let slot = match self.assigned.get(name) {
            Some(&s) => s,
            None => {
                let home = (fnv1a(name) % PALETTE.len() as u64) as usize;
                let slot = (0..PALETTE.len())
                    .map(|i| (home + i) % PALETTE.len())
                    .find(|&s| !self.taken[s])
                    .unwrap_or(home);
                self.taken[slot] = true;
                self.assigned.insert(name.to_string(), slot);
                slot
            }
        };
        AgentStyle {
            color: PALETTE[slot],
            glyph: GLYPHS[slot],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamTarget {
    Stdout,
    Stderr,
}

/// Human-readable sink: `<glyph> name: content` for chat records.
#[derive(Debug)]
pub struct HumanSink {
    target: StreamTarget,
    color: bool,
    styles: Mutex<StyleAssigner>,
}

impl HumanSink {
    pub fn new(target: StreamTarget, color: bool) -> Self {
        Self {
            target,
            color,
            styles: Mutex::new(StyleAssigner::default()),
        }
    }

    /// Style assigned to `name` by this sink.
    pub fn style(&self, name: &str) -> AgentStyle {
        self.styles.lock().unwrap().style(name)
    }

    pub fn render(&self, record: &LogRecord) -> String {
        match &record.msg {
            Some(m) => {
                let style = self.style(m.name());
                let mut line = if self.color {
                    format!("\x1b[{}m{} {}\x1b[0m: {}", style.color, style.glyph, m.name(), m.content())
                } else {
                    format!("{} {}: {}", style.glyph, m.name(), m.content())
                };
                if let Some(url) = m.url() {
                    line.push_str(&format!(" [{url}]"));
                }
                line
            }
            None => format!("{} {}: {}", record.level.as_str(), record.source, record.text),
        }
    }
}

impl LogSink for HumanSink {
    fn write(&self, record: &LogRecord) {
        let line = self.render(record);
        match self.target {
            StreamTarget::Stdout => {
                let mut out = std::io::stdout().lock();
                let _ = writeln!(out, "{line}");
                let _ = out.flush();
            }
            StreamTarget::Stderr => eprintln!("{line}"),
        }
    }
}

/// Appends one JSON object per record.
#[derive(Debug)]
pub struct JsonlSink {
    file: Mutex<BufWriter<File>>,
}

impl JsonlSink {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        if let Some(parent) = path.as_ref().parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Mutex::new(BufWriter::new(file)),
        })
    }
}

impl LogSink for JsonlSink {
    fn write(&self, record: &LogRecord) {
        let mut f = self.file.lock().unwrap();
        let _ = writeln!(f, "{}", record.to_json_line());
        let _ = f.flush();
    }
}

/// Keeps records in memory; used by tests and embedders.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    records: Arc<Mutex<Vec<LogRecord>>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> Vec<LogRecord> {
        self.records.lock().unwrap().clone()
    }

    pub fn messages(&self) -> Vec<Msg> {
        self.records().into_iter().filter_map(|r| r.msg).collect()
    }
}

impl LogSink for MemorySink {
    fn write(&self, record: &LogRecord) {
        self.records.lock().unwrap().push(record.clone());
    }
}

/// Level-filtered fan-out to sinks.
pub struct ChatLogger {
    level: RwLock<LogLevel>,
    sinks: RwLock<Vec<Arc<dyn LogSink>>>,
}

impl std::fmt::Debug for ChatLogger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatLogger")
            .field("level", &*self.level.read().unwrap())
            .field("sinks", &self.sinks.read().unwrap().len())
            .finish()
    }
}

impl Default for ChatLogger {
    fn default() -> Self {
        Self::new(LogLevel::Chat)
    }
}

impl ChatLogger {
    pub fn new(level: LogLevel) -> Self {
        Self {
            level: RwLock::new(level),
            sinks: RwLock::new(Vec::new()),
        }
    }

    pub fn configure(&self, level: LogLevel, sinks: Vec<Arc<dyn LogSink>>) {
        *self.level.write().unwrap() = level;
        *self.sinks.write().unwrap() = sinks;
    }

    pub fn set_level(&self, level: LogLevel) {
        *self.level.write().unwrap() = level;
    }

    pub fn level(&self) -> LogLevel {
        *self.level.read().unwrap()
    }

    pub fn add_sink(&self, sink: Arc<dyn LogSink>) {
        self.sinks.write().unwrap().push(sink);
    }

    pub fn enabled(&self, level: LogLevel) -> bool {
        level >= self.level()
    }

    pub fn log(&self, level: LogLevel, source: &str, text: impl Into<String>) {
        if !self.enabled(level) {
            return;
        }
        self.dispatch(&LogRecord {
            level,
            source: source.to_string(),
            msg: None,
            text: text.into(),
        });
    }

    pub fn log_chat(&self, msg: &Msg, source: &str) {
        if !self.enabled(LogLevel::Chat) {
            return;
        }
        self.dispatch(&LogRecord {
            level: LogLevel::Chat,
            source: source.to_string(),
            msg: Some(msg.clone()),
            text: msg.content().to_string(),
        });
    }

    pub fn info(&self, source: &str, text: impl Into<String>) {
        self.log(LogLevel::Info, source, text)
    }

    pub fn warning(&self, source: &str, text: impl Into<String>) {
        self.log(LogLevel::Warning, source, text)
    }

    fn dispatch(&self, record: &LogRecord) {
        for sink in self.sinks.read().unwrap().iter() {
            sink.write(record);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chat_sits_between_info_and_warning() {
        let logger = ChatLogger::new(LogLevel::Chat);
        let mem = MemorySink::new();
        logger.add_sink(Arc::new(mem.clone()));
        logger.info("t", "dropped");
        logger.log_chat(&Msg::new("a", "kept").unwrap(), "t");
        logger.warning("t", "kept too");
        let levels: Vec<LogLevel> = mem.records().iter().map(|r| r.level).collect();
        assert_eq!(levels, vec![LogLevel::Chat, LogLevel::Warning]);
        assert!(LogLevel::Info < LogLevel::Chat && LogLevel::Chat < LogLevel::Warning);
    }

    #[test]
    fn jsonl_lines_reparse_as_messages() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let logger = ChatLogger::default();
        logger.add_sink(Arc::new(JsonlSink::create(&path).unwrap()));
        let m = Msg::builder("Alice", "hi").url("file:///x.png").build().unwrap();
        logger.log_chat(&m, "runtime");
        let text = std::fs::read_to_string(&path).unwrap();
        let line = text.lines().next().unwrap();
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["level"], "CHAT");
        assert_eq!(v["source"], "runtime");
        assert_eq!(Msg::from_value(&v).unwrap(), m);
    }

    #[test]
    fn two_agents_get_distinct_stable_styles() {
        let sink = HumanSink::new(StreamTarget::Stdout, false);
        // Force a home-slot collision and check probing separates them.
        let names: Vec<String> = (0..64).map(|i| format!("agent{i}")).collect();
        let a = &names[0];
        let b = names
            .iter()
            .skip(1)
            .find(|n| agent_style(n) == agent_style(a))
            .expect("some collision among 64 names");
        let sa = sink.style(a);
        let sb = sink.style(b);
        assert_ne!(sa, sb);
        assert_eq!(sink.style(a), sa);
        assert_eq!(sink.style(b), sb);
        assert_eq!(sa, agent_style(a));
    }

    #[test]
    fn human_format() {
        let sink = HumanSink::new(StreamTarget::Stdout, false);
        let rec = LogRecord {
            level: LogLevel::Chat,
            source: "s".into(),
            msg: Some(Msg::new("Bob", "hello").unwrap()),
            text: String::new(),
        };
        let line = sink.render(&rec);
        assert!(line.ends_with(" Bob: hello"), "{line}");
        assert_eq!(line.len(), "** Bob: hello".len());
    }
}

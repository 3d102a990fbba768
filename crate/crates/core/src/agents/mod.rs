//! Agents: the reply/observe abstraction and the built-in agent types.

mod dialog;
mod echo;
mod image;
mod rag;
mod react;
mod user;

use std::sync::{Arc, Mutex, MutexGuard};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use dialog::{DialogAgent, DictDialogAgent};
pub use echo::{EchoAgent, FnAgent};
pub use image::TextToImageAgent;
pub use rag::RagAgent;
pub use react::{ProgrammerAgent, ReActAgent};
pub use user::{InputSource, ScriptedInput, StdinInput, UserAgent};

use crate::error::{Error, Result};
use crate::knowledge::{cosine, Embedder};
use crate::models::{Model, PromptMessage};
use crate::monitor::ChatLogger;
use crate::msg::{Message, Msg, Role};

/// An actor that replies to and observes messages.
///
/// Calls on one instance are serialized; distinct agents may run
/// concurrently.
pub trait Agent: Send + Sync {
    fn name(&self) -> &str;

    /// Produces a reply. `x` (when present) and the reply are recorded in
    /// memory.
    fn reply(&self, x: Option<&Message>) -> Result<Message>;

    /// Records `x` without replying.
    fn observe(&self, x: &Message) -> Result<()>;

    fn memory(&self) -> Result<Vec<Msg>>;

    fn clear_memory(&self) -> Result<()>;

    /// Class and arguments that re-create this agent elsewhere.
    fn config(&self) -> Option<AgentConfig> {
        None
    }
}

/// One entry of `agent_configs.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub agent_class: String,
    #[serde(default)]
    pub args: Map<String, Value>,
}

impl AgentConfig {
    pub fn new(agent_class: impl Into<String>) -> Self {
        Self {
            agent_class: agent_class.into(),
            args: Map::new(),
        }
    }

    /// Parses one `{"agent_class", "args"}` object.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::validation(format!("invalid agent config: {e}")))
    }

    pub fn arg(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.args.insert(key.to_string(), value.into());
        self
    }

    pub fn name(&self) -> Option<&str> {
        self.args.get("name").and_then(Value::as_str)
    }

    pub fn str_arg(&self, key: &str) -> Option<&str> {
        self.args.get(key).and_then(Value::as_str)
    }

    pub fn bool_arg(&self, key: &str) -> bool {
        self.args.get(key).and_then(Value::as_bool).unwrap_or(false)
    }

    pub fn u64_arg(&self, key: &str) -> Option<u64> {
        self.args.get(key).and_then(Value::as_u64)
    }

    pub fn require_str(&self, key: &str) -> Result<&str> {
        self.str_arg(key).ok_or_else(|| {
            Error::validation(format!("{} config missing field: {key}", self.agent_class))
        })
    }

    pub fn string_list(&self, key: &str) -> Vec<String> {
        self.args
            .get(key)
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
            .unwrap_or_default()
    }
}

/// Parses `agent_configs.json` (an array of configs).
pub fn parse_agent_configs(text: &str) -> Result<Vec<AgentConfig>> {
    serde_json::from_str(text).map_err(|e| Error::validation(format!("invalid agent configs: {e}")))
}

/// State shared by the built-in agents: name, memory, turn lock, logger.
pub struct AgentCore {
    name: String,
    memory: Mutex<Vec<Msg>>,
    turn: Mutex<()>,
    logger: Option<Arc<ChatLogger>>,
}

impl std::fmt::Debug for AgentCore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AgentCore").field("name", &self.name).finish()
    }
}

impl AgentCore {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::validation("agent name must be non-empty"));
        }
        Ok(Self {
            name,
            memory: Mutex::new(Vec::new()),
            turn: Mutex::new(()),
            logger: None,
        })
    }

    pub fn with_logger(mut self, logger: Option<Arc<ChatLogger>>) -> Self {
        self.logger = logger;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Serializes calls on one agent.
    pub fn turn(&self) -> MutexGuard<'_, ()> {
        self.turn.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn record(&self, m: Msg) {
        self.memory.lock().unwrap().push(m);
    }

    /// Resolves `x` (if any) and records it.
    pub fn record_input(&self, x: Option<&Message>) -> Result<Option<Msg>> {
        match x {
            None => Ok(None),
            Some(m) => {
                let msg = m.to_msg()?;
                self.record(msg.clone());
                Ok(Some(msg))
            }
        }
    }

    pub fn memory(&self) -> Vec<Msg> {
        self.memory.lock().unwrap().clone()
    }

    pub fn clear(&self) {
        self.memory.lock().unwrap().clear();
    }

    /// Logs `m` at chat level.
    pub fn speak(&self, m: &Msg) {
        if let Some(logger) = &self.logger {
            logger.log_chat(m, &self.name);
        }
    }

    /// Builds a reply authored by this agent.
    pub fn message(&self, content: impl Into<String>) -> Result<Msg> {
        Msg::new(self.name.clone(), content)
    }

    /// System prompt followed by every memory entry.
    pub fn prompt(&self, sys_prompt: &str) -> Vec<PromptMessage> {
        let mut out = Vec::new();
        if !sys_prompt.is_empty() {
            out.push(PromptMessage::system(sys_prompt));
        }
        out.extend(self.memory().iter().map(PromptMessage::from));
        out
    }
}

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '-'
}

/// Agents mentioned as `@name` in `content`, by first occurrence, without
/// duplicates. A mention must be followed by a non-name character or the end
/// of the text.
pub fn filter_agents(content: &str, candidates: &[Arc<dyn Agent>]) -> Vec<Arc<dyn Agent>> {
    let mut hits: Vec<(usize, usize)> = Vec::new();
    for (pos, _) in content.match_indices('@') {
        let rest = &content[pos + 1..];
        for (i, agent) in candidates.iter().enumerate() {
            let name = agent.name();
            if let Some(after) = rest.strip_prefix(name) {
                if after.chars().next().map_or(true, |c| !is_name_char(c)) && !hits.iter().any(|(_, j)| *j == i) {
                    hits.push((pos, i));
                }
            }
        }
    }
    hits.sort();
    hits.into_iter().map(|(_, i)| candidates[i].clone()).collect()
}

const SYS_PROMPT_TEMPLATE: &str = "You are an expert prompt engineer. Write a system prompt for an AI agent \
with the following description. Reply with the system prompt only.\n\nDescription: {description}";

/// The request sent to the model by [`generate_sys_prompt`].
pub fn sys_prompt_request(description: &str) -> String {
    SYS_PROMPT_TEMPLATE.replace("{description}", description)
}

/// Asks `model` to expand a short agent description into a system prompt.
pub fn generate_sys_prompt(description: &str, model: &Model) -> Result<String> {
    if description.trim().is_empty() {
        return Err(Error::validation("agent description must be non-empty"));
    }
    let prompt = [PromptMessage::new(Role::User, "user", sys_prompt_request(description))];
    let text = model.invoke(&prompt)?.text.trim().to_string();
    if text.is_empty() {
        return Err(Error::Unresolvable("model returned an empty system prompt".into()));
    }
    Ok(text)
}

/// An in-context example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demo {
    pub question: String,
    pub answer: String,
}

impl Demo {
    pub fn new(question: impl Into<String>, answer: impl Into<String>) -> Self {
        Self {
            question: question.into(),
            answer: answer.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoSelection {
    Random,
    SimilarQuestion,
    SimilarAnswer,
}

impl DemoSelection {
    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| Error::validation(format!("unknown matching_approach: {s}")))
    }
}

/// Picks `k` demos: seeded random sampling, or the top `k` by cosine
/// similarity of `query` against questions (or answers), ties by index.
pub fn select_demos(
    demos: &[Demo],
    query: &str,
    approach: DemoSelection,
    k: usize,
    seed: u64,
    embedder: Option<&dyn Embedder>,
) -> Result<Vec<Demo>> {
    if k > demos.len() {
        return Err(Error::validation(format!("k ({k}) exceeds the number of demos ({})", demos.len())));
    }
    match approach {
        DemoSelection::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let picks = rand::seq::index::sample(&mut rng, demos.len(), k);
            Ok(picks.into_iter().map(|i| demos[i].clone()).collect())
        }
        DemoSelection::SimilarQuestion | DemoSelection::SimilarAnswer => {
            let embedder = embedder.ok_or_else(|| Error::validation("similarity demo selection needs an embedder"))?;
            let mut texts = vec![query.to_string()];
            texts.extend(demos.iter().map(|d| {
                if approach == DemoSelection::SimilarQuestion {
                    d.question.clone()
                } else {
                    d.answer.clone()
                }
            }));
            let vectors = embedder.embed(&texts)?;
            let q = &vectors[0];
            let mut scored: Vec<(f64, usize)> = vectors[1..].iter().enumerate().map(|(i, v)| (cosine(q, v), i)).collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            Ok(scored.into_iter().take(k).map(|(_, i)| demos[i].clone()).collect())
        }
    }
}

/// Renders demos for inclusion in a system prompt.
pub fn render_demos(demos: &[Demo]) -> String {
    let mut out = String::from("Examples:");
    for d in demos {
        out.push_str(&format!("\nQ: {}\nA: {}", d.question, d.answer));
    }
    out
}

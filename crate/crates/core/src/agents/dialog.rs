use std::sync::Arc;

use serde_json::{Map, Value};

use super::{render_demos, select_demos, Agent, AgentConfig, AgentCore, Demo, DemoSelection};
use crate::error::{Error, Result};
use crate::knowledge::Embedder;
use crate::models::{repair_json, Model, ModelResponse};
use crate::monitor::ChatLogger;
use crate::msg::{canonicalize, Message, Msg};

/// Adds `model_config_name` and, when known, the inline `model_config`.
pub(crate) fn model_args(model: &Model, args: &mut Map<String, Value>) {
    args.insert("model_config_name".into(), Value::String(model.config_name().to_string()));
    if let Some(cfg) = model.model_config() {
        if let Ok(v) = serde_json::to_value(cfg) {
            args.insert("model_config".into(), v);
        }
    }
}

#[derive(Clone)]
struct Icl {
    demos: Vec<Demo>,
    approach: DemoSelection,
    k: usize,
    seed: u64,
    embedder: Option<Arc<dyn Embedder>>,
}

/// A model-backed conversational agent.
pub struct DialogAgent {
    core: AgentCore,
    sys_prompt: String,
    model: Model,
    icl: Option<Icl>,
}

impl std::fmt::Debug for DialogAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DialogAgent").field("name", &self.core.name()).finish()
    }
}

impl DialogAgent {
    pub fn new(name: impl Into<String>, sys_prompt: impl Into<String>, model: Model) -> Result<Self> {
        Ok(Self {
            core: AgentCore::new(name)?,
            sys_prompt: sys_prompt.into(),
            model,
            icl: None,
        })
    }

    pub fn with_logger(mut self, logger: Option<Arc<ChatLogger>>) -> Self {
        self.core = self.core.with_logger(logger);
        self
    }

    /// Treats the current system prompt as a description and replaces it
    /// with a model-generated prompt.
    pub fn with_auto_sys_prompt(mut self) -> Result<Self> {
        self.sys_prompt = super::generate_sys_prompt(&self.sys_prompt, &self.model)?;
        Ok(self)
    }

    /// Prepends `k` selected demos to the system prompt on every reply.
    pub fn with_icl(
        mut self,
        demos: Vec<Demo>,
        approach: DemoSelection,
        k: usize,
        seed: u64,
        embedder: Option<Arc<dyn Embedder>>,
    ) -> Result<Self> {
        if k > demos.len() {
            return Err(Error::validation(format!("k ({k}) exceeds the number of demos ({})", demos.len())));
        }
        if approach != DemoSelection::Random && embedder.is_none() {
            return Err(Error::validation("similarity demo selection needs an embedder"));
        }
        self.icl = Some(Icl {
            demos,
            approach,
            k,
            seed,
            embedder,
        });
        Ok(self)
    }

    pub fn sys_prompt(&self) -> &str {
        &self.sys_prompt
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    fn system_text(&self, query: &str) -> Result<String> {
        let Some(icl) = &self.icl else {
            return Ok(self.sys_prompt.clone());
        };
        let picked = select_demos(&icl.demos, query, icl.approach, icl.k, icl.seed, icl.embedder.as_deref())?;
        if picked.is_empty() {
            return Ok(self.sys_prompt.clone());
        }
        Ok(format!("{}\n\n{}", self.sys_prompt, render_demos(&picked)).trim_start().to_string())
    }
}

impl Agent for DialogAgent {
    fn name(&self) -> &str {
        self.core.name()
    }

    fn reply(&self, x: Option<&Message>) -> Result<Message> {
        let _turn = self.core.turn();
        let run = || -> Result<Msg> {
            let input = self.core.record_input(x)?;
            let query = input.as_ref().map(|m| m.content().to_string()).unwrap_or_default();
            let prompt = self.core.prompt(&self.system_text(&query)?);
            let resp = self.model.invoke(&prompt)?;
            self.core.message(resp.text)
        };
        let msg = run().map_err(|e| e.in_agent(self.name()))?;
        self.core.record(msg.clone());
        self.core.speak(&msg);
        Ok(msg.into())
    }

    fn observe(&self, x: &Message) -> Result<()> {
        let _turn = self.core.turn();
        self.core.record_input(Some(x)).map(|_| ())
    }

    fn memory(&self) -> Result<Vec<Msg>> {
        Ok(self.core.memory())
    }

    fn clear_memory(&self) -> Result<()> {
        self.core.clear();
        Ok(())
    }

    fn config(&self) -> Option<AgentConfig> {
        let mut cfg = AgentConfig::new("DialogAgent")
            .arg("name", self.name())
            .arg("sys_prompt", self.sys_prompt.as_str());
        model_args(&self.model, &mut cfg.args);
        if let Some(icl) = &self.icl {
            if icl.embedder.is_some() {
                return None;
            }
            cfg.args.insert("enable_icl".into(), Value::Bool(true));
            cfg.args.insert("demos".into(), serde_json::to_value(&icl.demos).ok()?);
            cfg.args.insert("matching_approach".into(), serde_json::to_value(icl.approach).ok()?);
            cfg.args.insert("icl_k".into(), Value::from(icl.k));
            cfg.args.insert("seed".into(), Value::from(icl.seed));
        }
        Some(cfg)
    }
}

/// Replies with a structured map parsed from the model output.
///
/// The parsed map is stored in the reply's metadata; its `speak` value (if
/// any) becomes the content.
pub struct DictDialogAgent {
    core: AgentCore,
    sys_prompt: String,
    model: Model,
    required_keys: Vec<String>,
    parse_retries: u32,
}

impl std::fmt::Debug for DictDialogAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DictDialogAgent").field("name", &self.core.name()).finish()
    }
}

/// Repairs and parses `text` as a JSON object holding every required key.
pub fn parse_structured(text: &str, required_keys: &[String]) -> Result<Map<String, Value>> {
    let all_missing = || Error::StructuredResponse {
        missing: required_keys.to_vec(),
        last_text: text.to_string(),
    };
    let parsed = match repair_json(text) {
        Ok(Value::Object(m)) => m,
        _ => return Err(all_missing()),
    };
    let missing: Vec<String> = required_keys.iter().filter(|k| !parsed.contains_key(*k)).cloned().collect();
    if missing.is_empty() {
        Ok(parsed)
    } else {
        Err(Error::StructuredResponse {
            missing,
            last_text: text.to_string(),
        })
    }
}

impl DictDialogAgent {
    pub fn new(name: impl Into<String>, sys_prompt: impl Into<String>, model: Model) -> Result<Self> {
        Ok(Self {
            core: AgentCore::new(name)?,
            sys_prompt: sys_prompt.into(),
            model,
            required_keys: Vec::new(),
            parse_retries: 2,
        })
    }

    pub fn with_required_keys<I, S>(mut self, keys: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.required_keys = keys.into_iter().map(Into::into).collect();
        self
    }

    /// Re-invocations allowed after an unparseable response.
    pub fn with_parse_retries(mut self, n: u32) -> Self {
        self.parse_retries = n;
        self
    }

    pub fn with_logger(mut self, logger: Option<Arc<ChatLogger>>) -> Self {
        self.core = self.core.with_logger(logger);
        self
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn required_keys(&self) -> &[String] {
        &self.required_keys
    }
}

impl Agent for DictDialogAgent {
    fn name(&self) -> &str {
        self.core.name()
    }

    fn reply(&self, x: Option<&Message>) -> Result<Message> {
        let _turn = self.core.turn();
        let run = || -> Result<Msg> {
            self.core.record_input(x)?;
            let prompt = self.core.prompt(&self.sys_prompt);
            let keys = self.required_keys.clone();
            let parsed = self.model.invoke_with_parsing(
                &prompt,
                |r: &ModelResponse| parse_structured(&r.text, &keys),
                None,
                self.parse_retries,
            )?;
            let content = match parsed.get("speak") {
                Some(Value::String(s)) => s.clone(),
                Some(other) => other.to_string(),
                None => canonicalize(Value::Object(parsed.clone())).to_string(),
            };
            let metadata = match canonicalize(Value::Object(parsed)) {
                Value::Object(m) => m,
                _ => Map::new(),
            };
            Msg::builder(self.name(), content).metadata(metadata).build()
        };
        let msg = run().map_err(|e| e.in_agent(self.name()))?;
        self.core.record(msg.clone());
        self.core.speak(&msg);
        Ok(msg.into())
    }

    fn observe(&self, x: &Message) -> Result<()> {
        let _turn = self.core.turn();
        self.core.record_input(Some(x)).map(|_| ())
    }

    fn memory(&self) -> Result<Vec<Msg>> {
        Ok(self.core.memory())
    }

    fn clear_memory(&self) -> Result<()> {
        self.core.clear();
        Ok(())
    }

    fn config(&self) -> Option<AgentConfig> {
        let mut cfg = AgentConfig::new("DictDialogAgent")
            .arg("name", self.name())
            .arg("sys_prompt", self.sys_prompt.as_str())
            .arg("required_keys", self.required_keys.clone())
            .arg("max_retries", self.parse_retries);
        model_args(&self.model, &mut cfg.args);
        Some(cfg)
    }
}

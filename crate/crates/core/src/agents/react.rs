use std::sync::Arc;

use serde_json::{json, Map, Value};

use super::dialog::model_args;
use super::{Agent, AgentConfig, AgentCore};
use crate::error::Result;
use crate::models::{Model, PromptMessage};
use crate::monitor::ChatLogger;
use crate::msg::{Message, Msg};
use crate::services::{react_run, react_sys_prompt, ServiceRegistry, Toolkit};

pub const DEFAULT_MAX_ITERS: usize = 10;

/// Reasons and uses tools until it calls `finish`.
pub struct ReActAgent {
    core: AgentCore,
    sys_prompt: String,
    model: Model,
    toolkit: Arc<Toolkit>,
    tool_specs: Vec<Value>,
    max_iters: usize,
}

impl std::fmt::Debug for ReActAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReActAgent")
            .field("name", &self.core.name())
            .field("tools", &self.toolkit.names())
            .finish()
    }
}

impl ReActAgent {
    /// Fails when the toolkit is empty.
    pub fn new(name: impl Into<String>, sys_prompt: impl Into<String>, model: Model, toolkit: Toolkit) -> Result<Self> {
        let sys_prompt = sys_prompt.into();
        react_sys_prompt(&sys_prompt, &toolkit)?;
        Ok(Self {
            core: AgentCore::new(name)?,
            sys_prompt,
            model,
            toolkit: Arc::new(toolkit),
            tool_specs: Vec::new(),
            max_iters: DEFAULT_MAX_ITERS,
        })
    }

    /// Builds the toolkit from registry entries (`"name"` or
    /// `{"name", "preset"}`); these entries are what [`Agent::config`]
    /// reports.
    pub fn from_registry(
        name: impl Into<String>,
        sys_prompt: impl Into<String>,
        model: Model,
        registry: &ServiceRegistry,
        tools: Vec<Value>,
    ) -> Result<Self> {
        let toolkit = registry.toolkit(&tools)?;
        let mut a = Self::new(name, sys_prompt, model, toolkit)?;
        a.tool_specs = tools;
        Ok(a)
    }

    pub fn with_max_iters(mut self, n: usize) -> Self {
        self.max_iters = n.max(1);
        self
    }

    pub fn with_logger(mut self, logger: Option<Arc<ChatLogger>>) -> Self {
        self.core = self.core.with_logger(logger);
        self
    }

    pub fn toolkit(&self) -> &Toolkit {
        &self.toolkit
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    fn run(&self, x: Option<&Message>) -> Result<Msg> {
        self.core.record_input(x)?;
        let system = react_sys_prompt(&self.sys_prompt, &self.toolkit)?;
        let mut history = vec![PromptMessage::system(system)];
        history.extend(self.core.memory().iter().map(PromptMessage::from));
        let outcome = react_run(&self.model, &self.toolkit, self.name(), history, self.max_iters)?;
        self.core.message(outcome.answer)
    }
}

impl Agent for ReActAgent {
    fn name(&self) -> &str {
        self.core.name()
    }

    fn reply(&self, x: Option<&Message>) -> Result<Message> {
        let _turn = self.core.turn();
        let msg = self.run(x).map_err(|e| e.in_agent(self.name()))?;
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
        if self.tool_specs.is_empty() {
            return None;
        }
        let mut cfg = AgentConfig::new("ReActAgent")
            .arg("name", self.name())
            .arg("sys_prompt", self.sys_prompt.as_str())
            .arg("tools", self.tool_specs.clone())
            .arg("max_iters", self.max_iters);
        model_args(&self.model, &mut cfg.args);
        Some(cfg)
    }
}

const PROGRAMMER_PROMPT: &str = "You are a programmer. Read and write files and compute values with the tools, then finish with the answer.";

/// A ReAct agent preloaded with file and arithmetic tools.
#[derive(Debug)]
pub struct ProgrammerAgent {
    inner: ReActAgent,
}

impl ProgrammerAgent {
    pub fn new(name: impl Into<String>, model: Model) -> Result<Self> {
        let tools = vec![json!("read_text_file"), json!("write_text_file"), json!("evaluate_arithmetic")];
        let inner = ReActAgent::from_registry(name, PROGRAMMER_PROMPT, model, &ServiceRegistry::with_builtins(), tools)?;
        Ok(Self { inner })
    }

    pub fn with_max_iters(mut self, n: usize) -> Self {
        self.inner = self.inner.with_max_iters(n);
        self
    }

    pub fn with_logger(mut self, logger: Option<Arc<ChatLogger>>) -> Self {
        self.inner = self.inner.with_logger(logger);
        self
    }
}

impl Agent for ProgrammerAgent {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn reply(&self, x: Option<&Message>) -> Result<Message> {
        self.inner.reply(x)
    }

    fn observe(&self, x: &Message) -> Result<()> {
        self.inner.observe(x)
    }

    fn memory(&self) -> Result<Vec<Msg>> {
        self.inner.memory()
    }

    fn clear_memory(&self) -> Result<()> {
        self.inner.clear_memory()
    }

    fn config(&self) -> Option<AgentConfig> {
        let mut args = Map::new();
        args.insert("name".into(), json!(self.name()));
        args.insert("max_iters".into(), json!(self.inner.max_iters));
        model_args(&self.inner.model, &mut args);
        Some(AgentConfig {
            agent_class: "ProgrammerAgent".into(),
            args,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ErrorKind;
    use crate::models::{ModelConfig, NoSleep, RetryPolicy, ScriptedBackend, ScriptedRule};
    use crate::monitor::Monitor;

    fn model(rules: Vec<ScriptedRule>) -> Model {
        let cfg = ModelConfig::scripted("m", rules);
        Model::new(
            Arc::new(ScriptedBackend::new(&cfg)),
            RetryPolicy::default(),
            Arc::new(Monitor::new()),
            Arc::new(NoSleep),
        )
    }

    #[test]
    fn malformed_then_tool_then_finish() {
        let m = model(ScriptedRule::sequence([
            "I think the answer is fourteen",
            r#"```json
{"thought":"compute","speak":"computing","function":[{"name":"evaluate_arithmetic","arguments":{"expression":"2*(3+4)"}}]}
```"#,
            r#"{"thought":"done","speak":"","function":[{"name":"finish","arguments":{"response":"The answer is 14"}}]}"#,
        ]));
        let a = ReActAgent::from_registry("calc", "", m, &ServiceRegistry::with_builtins(), vec![json!("evaluate_arithmetic")])
            .unwrap();
        let q: Message = Msg::new("user", "2*(3+4)?").unwrap().into();
        let r = a.reply(Some(&q)).unwrap();
        assert_eq!(r.content().unwrap(), "The answer is 14");
        let reqs = a.model().scripted().unwrap().requests();
        assert_eq!(reqs.len(), 3);
        assert!(reqs[1].last().unwrap().content.starts_with("response parsing error"));
        assert!(reqs[2].last().unwrap().content.contains("[SUCCESS]: 14"));
        assert_eq!(reqs[2].len(), reqs[0].len() + 4);
    }

    #[test]
    fn empty_toolkit_rejected() {
        let err = ReActAgent::new("r", "", model(vec![]), Toolkit::new()).unwrap_err();
        assert_eq!(err.kind(), ErrorKind::Validation);
    }

    #[test]
    fn programmer_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt").to_string_lossy().replace('\\', "/");
        let call = json!({"thought":"write","speak":"","function":[
            {"name":"write_text_file","arguments":{"path": path, "text":"fn main() {}"}},
            {"name":"finish","arguments":{"response":"written"}}
        ]});
        let a = ProgrammerAgent::new("coder", model(vec![ScriptedRule::respond(call.to_string())])).unwrap();
        assert_eq!(a.reply(None).unwrap().content().unwrap(), "written");
        assert_eq!(std::fs::read_to_string(dir.path().join("out.txt")).unwrap(), "fn main() {}");
        assert_eq!(a.config().unwrap().agent_class, "ProgrammerAgent");
    }
}

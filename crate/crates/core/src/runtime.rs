//! The runtime: shared registries and the agent factory.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde_json::Value;

use crate::agents::{
    parse_agent_configs, Agent, AgentConfig, Demo, DemoSelection, DialogAgent, DictDialogAgent, EchoAgent,
    InputSource, ProgrammerAgent, RagAgent, ReActAgent, StdinInput, TextToImageAgent, UserAgent,
};
use crate::error::{Error, Result};
use crate::knowledge::{parse_bank_config, Embedder, KnowledgeBank, MockEmbedder, MOCK_EMBEDDING_DIM};
use crate::models::{Model, ModelConfig, ModelRegistry, RetryPolicy, Sleeper, ThreadSleeper};
use crate::monitor::{run_dir_from_env, ChatLogger, FileManager, LogLevel, Monitor};
use crate::services::ServiceRegistry;

/// Agent classes the factory can build.
pub const AGENT_CLASSES: &[&str] = &[
    "DialogAgent",
    "DictDialogAgent",
    "EchoAgent",
    "ProgrammerAgent",
    "RAGAgent",
    "ReActAgent",
    "TextToImageAgent",
    "UserAgent",
];

pub struct RuntimeBuilder {
    run_dir: Option<PathBuf>,
    retry: RetryPolicy,
    sleeper: Arc<dyn Sleeper>,
    input: Arc<dyn InputSource>,
    log_level: LogLevel,
    allowed_classes: Option<Vec<String>>,
}

impl Default for RuntimeBuilder {
    fn default() -> Self {
        Self {
            run_dir: None,
            retry: RetryPolicy::default(),
            sleeper: Arc::new(ThreadSleeper),
            input: Arc::new(StdinInput),
            log_level: LogLevel::Chat,
            allowed_classes: None,
        }
    }
}

impl RuntimeBuilder {
    /// Root for artifacts and logs; defaults to `AGENTMESH_RUN_DIR` or
    /// `./runs`.
    pub fn run_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.run_dir = Some(dir.into());
        self
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    /// Where `UserAgent`s built by the factory read their turns.
    pub fn input(mut self, input: Arc<dyn InputSource>) -> Self {
        self.input = input;
        self
    }

    pub fn log_level(mut self, level: LogLevel) -> Self {
        self.log_level = level;
        self
    }

    /// Restricts which classes the factory builds.
    pub fn allowed_classes(mut self, classes: Vec<String>) -> Self {
        self.allowed_classes = Some(classes);
        self
    }

    pub fn build(self) -> Arc<Runtime> {
        let run_dir = self.run_dir.unwrap_or_else(|| run_dir_from_env("runs"));
        Arc::new(Runtime {
            models: ModelRegistry::new(),
            model_cache: Mutex::new(HashMap::new()),
            monitor: Arc::new(Monitor::new()),
            logger: Arc::new(ChatLogger::new(self.log_level)),
            files: Arc::new(FileManager::new(run_dir)),
            knowledge: RwLock::new(Arc::new(KnowledgeBank::new())),
            services: ServiceRegistry::with_builtins(),
            retry: self.retry,
            sleeper: self.sleeper,
            input: RwLock::new(self.input),
            agents: RwLock::new(BTreeMap::new()),
            allowed_classes: self.allowed_classes,
        })
    }
}

/// Everything agents, workflows and servers share within one process.
pub struct Runtime {
    models: ModelRegistry,
    model_cache: Mutex<HashMap<String, Model>>,
    monitor: Arc<Monitor>,
    logger: Arc<ChatLogger>,
    files: Arc<FileManager>,
    knowledge: RwLock<Arc<KnowledgeBank>>,
    services: ServiceRegistry,
    retry: RetryPolicy,
    sleeper: Arc<dyn Sleeper>,
    input: RwLock<Arc<dyn InputSource>>,
    agents: RwLock<BTreeMap<String, Arc<dyn Agent>>>,
    allowed_classes: Option<Vec<String>>,
}

impl std::fmt::Debug for Runtime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runtime")
            .field("models", &self.models.names())
            .field("agents", &self.agent_names())
            .finish()
    }
}

impl Runtime {
    pub fn builder() -> RuntimeBuilder {
        RuntimeBuilder::default()
    }

    pub fn models(&self) -> &ModelRegistry {
        &self.models
    }

    pub fn monitor(&self) -> &Arc<Monitor> {
        &self.monitor
    }

    pub fn logger(&self) -> &Arc<ChatLogger> {
        &self.logger
    }

    pub fn files(&self) -> &Arc<FileManager> {
        &self.files
    }

    pub fn run_dir(&self) -> &Path {
        self.files.run_dir()
    }

    pub fn services(&self) -> &ServiceRegistry {
        &self.services
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        self.retry.clone()
    }

    pub fn sleeper(&self) -> Arc<dyn Sleeper> {
        self.sleeper.clone()
    }

    pub fn knowledge(&self) -> Arc<KnowledgeBank> {
        self.knowledge.read().unwrap().clone()
    }

    pub fn set_input(&self, input: Arc<dyn InputSource>) {
        *self.input.write().unwrap() = input;
    }

    pub fn input(&self) -> Arc<dyn InputSource> {
        self.input.read().unwrap().clone()
    }

    /// A runtime for hosting agents next to this one, as an in-process
    /// server does. It shares logging, usage accounting, files, services,
    /// knowledge and input, but has its own agents and fresh model backends
    /// built from the same configs.
    pub fn child(&self) -> Arc<Runtime> {
        let models = ModelRegistry::new();
        for name in self.models.names() {
            if let Ok(c) = self.models.config(&name) {
                let _ = models.register(c);
            }
        }
        Arc::new(Runtime {
            models,
            model_cache: Mutex::new(HashMap::new()),
            monitor: self.monitor.clone(),
            logger: self.logger.clone(),
            files: self.files.clone(),
            knowledge: RwLock::new(self.knowledge()),
            services: self.services.clone(),
            retry: self.retry.clone(),
            sleeper: self.sleeper.clone(),
            input: RwLock::new(self.input()),
            agents: RwLock::new(BTreeMap::new()),
            allowed_classes: self.allowed_classes.clone(),
        })
    }

    /// Registers configs, applying their prices to the monitor.
    pub fn register_models(&self, configs: Vec<ModelConfig>) -> Result<Vec<String>> {
        for c in &configs {
            if let Some(p) = c.price_per_1k_tokens {
                self.monitor.set_price(&c.config_name, p);
            }
        }
        self.models.register_all(configs)
    }

    pub fn register_model_file(&self, path: impl AsRef<Path>) -> Result<Vec<String>> {
        let text = std::fs::read_to_string(path.as_ref())?;
        self.register_models(crate::models::parse_config_list(&text)?)
    }

    /// The model for a config name. One instance per name, so every agent
    /// using a config shares its backend state and usage record.
    pub fn model(&self, config_name: &str) -> Result<Model> {
        let mut cache = self.model_cache.lock().unwrap();
        if let Some(m) = cache.get(config_name) {
            return Ok(m.clone());
        }
        let backend = self.models.backend(config_name)?;
        let config = self.models.config(config_name)?;
        let m = Model::new(backend, self.retry.clone(), self.monitor.clone(), self.sleeper.clone()).with_config(config);
        cache.insert(config_name.to_string(), m.clone());
        Ok(m)
    }

    /// Embedder for a knowledge object: a named model, or the hashed
    /// bag-of-words mock when unset.
    pub fn embedder(&self, config_name: Option<&str>) -> Result<Arc<dyn Embedder>> {
        match config_name {
            None | Some("") | Some("mock") => Ok(Arc::new(MockEmbedder::new(MOCK_EMBEDDING_DIM))),
            Some(name) => Ok(Arc::new(self.model(name)?)),
        }
    }

    /// Builds the knowledge bank from a config file's text.
    pub fn init_knowledge(&self, config_text: &str) -> Result<Vec<String>> {
        let configs = parse_bank_config(config_text)?;
        let bank = KnowledgeBank::init(configs, |name| self.embedder(name))?;
        let warnings = bank.warnings();
        *self.knowledge.write().unwrap() = Arc::new(bank);
        Ok(warnings)
    }

    pub fn add_agent(&self, agent: Arc<dyn Agent>) -> Result<()> {
        let mut agents = self.agents.write().unwrap();
        if agents.contains_key(agent.name()) {
            return Err(Error::validation(format!("duplicate agent name: {}", agent.name())));
        }
        agents.insert(agent.name().to_string(), agent);
        Ok(())
    }

    pub fn agent(&self, name: &str) -> Result<Arc<dyn Agent>> {
        self.agents
            .read()
            .unwrap()
            .get(name)
            .cloned()
            .ok_or_else(|| Error::validation(format!("unknown agent: {name}")))
    }

    pub fn agent_names(&self) -> Vec<String> {
        self.agents.read().unwrap().keys().cloned().collect()
    }

    /// Creates and registers every agent of an `agent_configs.json` text.
    pub fn load_agent_configs(&self, text: &str) -> Result<Vec<Arc<dyn Agent>>> {
        let mut out = Vec::new();
        for cfg in parse_agent_configs(text)? {
            let a = self.create_agent(&cfg)?;
            self.add_agent(a.clone())?;
            out.push(a);
        }
        Ok(out)
    }

    pub fn is_allowed(&self, class: &str) -> bool {
        AGENT_CLASSES.contains(&class)
            && self
                .allowed_classes
                .as_ref()
                .is_none_or(|allowed| allowed.iter().any(|c| c == class))
    }

    fn model_for(&self, cfg: &AgentConfig) -> Result<Model> {
        if let Some(inline) = cfg.args.get("model_config") {
            let mc: ModelConfig = serde_json::from_value(inline.clone())
                .map_err(|e| Error::validation(format!("invalid inline model_config: {e}")))?;
            if !self.models.contains(&mc.config_name) {
                self.register_models(vec![mc.clone()])?;
            }
            return self.model(&mc.config_name);
        }
        self.model(cfg.require_str("model_config_name")?)
    }

    /// Builds an agent from its class name and arguments. The agent is not
    /// registered by name; see [`Runtime::add_agent`].
    pub fn create_agent(&self, cfg: &AgentConfig) -> Result<Arc<dyn Agent>> {
        let class = cfg.agent_class.as_str();
        if !self.is_allowed(class) {
            return Err(Error::validation(format!("unknown agent class: {class}")));
        }
        let name = cfg.require_str("name")?;
        let sys_prompt = cfg.str_arg("sys_prompt").unwrap_or_default();
        let logger = Some(self.logger.clone());
        let agent: Arc<dyn Agent> = match class {
            "EchoAgent" => Arc::new(EchoAgent::new(name)?.with_logger(logger)),
            "DialogAgent" => {
                let mut a = DialogAgent::new(name, sys_prompt, self.model_for(cfg)?)?.with_logger(logger);
                if cfg.bool_arg("auto_sys_prompt") {
                    a = a.with_auto_sys_prompt()?;
                }
                if cfg.bool_arg("enable_icl") {
                    let demos: Vec<Demo> = serde_json::from_value(cfg.args.get("demos").cloned().unwrap_or(Value::Null))
                        .map_err(|e| Error::validation(format!("invalid demos: {e}")))?;
                    let approach = DemoSelection::parse(cfg.str_arg("matching_approach").unwrap_or("random"))?;
                    let k = cfg.u64_arg("icl_k").map_or(demos.len().min(3), |k| k as usize);
                    let seed = cfg.u64_arg("seed").unwrap_or(0);
                    let embedder = match approach {
                        DemoSelection::Random => None,
                        _ => Some(self.embedder(cfg.str_arg("embedding_model"))?),
                    };
                    a = a.with_icl(demos, approach, k, seed, embedder)?;
                }
                Arc::new(a)
            }
            "DictDialogAgent" => {
                let mut a = DictDialogAgent::new(name, sys_prompt, self.model_for(cfg)?)?
                    .with_required_keys(cfg.string_list("required_keys"))
                    .with_logger(logger);
                if let Some(n) = cfg.u64_arg("max_retries") {
                    a = a.with_parse_retries(n as u32);
                }
                Arc::new(a)
            }
            "UserAgent" => {
                let mut a = UserAgent::new(name, self.input())?.with_logger(logger);
                if let Some(ms) = cfg.u64_arg("timeout_ms") {
                    a = a.with_timeout(Some(std::time::Duration::from_millis(ms)));
                }
                if let Some(p) = cfg.str_arg("prompt") {
                    a = a.with_prompt(p);
                }
                Arc::new(a)
            }
            "RAGAgent" => {
                let ids = cfg.string_list("knowledge_ids");
                let weights: Vec<f64> = match cfg.args.get("knowledge_weights") {
                    Some(w) => serde_json::from_value(w.clone())
                        .map_err(|e| Error::validation(format!("invalid knowledge_weights: {e}")))?,
                    None => vec![1.0; ids.len()],
                };
                if weights.len() != ids.len() {
                    return Err(Error::validation("knowledge_weights must match knowledge_ids in length"));
                }
                let bank = self.knowledge();
                let sources = ids
                    .iter()
                    .zip(weights)
                    .map(|(id, w)| Ok((bank.get(id)?, w)))
                    .collect::<Result<Vec<_>>>()?;
                let mut a = RagAgent::new(name, sys_prompt, self.model_for(cfg)?, sources)?.with_logger(logger);
                if let Some(k) = cfg.u64_arg("top_k") {
                    a = a.with_top_k(k as usize);
                }
                if let Some(r) = cfg.u64_arg("repeats") {
                    a = a.with_repeats(r as usize)?;
                }
                Arc::new(a)
            }
            "ReActAgent" => {
                let tools = cfg.args.get("tools").and_then(Value::as_array).cloned().unwrap_or_default();
                let mut a = ReActAgent::from_registry(name, sys_prompt, self.model_for(cfg)?, &self.services, tools)?
                    .with_logger(logger);
                if let Some(n) = cfg.u64_arg("max_iters") {
                    a = a.with_max_iters(n as usize);
                }
                Arc::new(a)
            }
            "ProgrammerAgent" => {
                let mut a = ProgrammerAgent::new(name, self.model_for(cfg)?)?.with_logger(logger);
                if let Some(n) = cfg.u64_arg("max_iters") {
                    a = a.with_max_iters(n as usize);
                }
                Arc::new(a)
            }
            "TextToImageAgent" => {
                let mut a = TextToImageAgent::new(name, self.model_for(cfg)?, self.files.clone())?.with_logger(logger);
                if let Some(ext) = cfg.str_arg("extension") {
                    a = a.with_extension(ext);
                }
                Arc::new(a)
            }
            other => return Err(Error::validation(format!("unknown agent class: {other}"))),
        };
        Ok(agent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::ScriptedInput;
    use crate::models::{NoSleep, ScriptedRule};
    use crate::msg::{Message, Msg};

    fn rt() -> Arc<Runtime> {
        let dir = tempfile::tempdir().unwrap().keep();
        Runtime::builder()
            .run_dir(dir)
            .sleeper(Arc::new(NoSleep))
            .input(Arc::new(ScriptedInput::new(["hello"])))
            .build()
    }

    #[test]
    fn factory_builds_from_configs() {
        let rt = rt();
        rt.register_models(vec![ModelConfig::scripted("m", vec![ScriptedRule::respond("Hi!")])])
            .unwrap();
        let agents = rt
            .load_agent_configs(
                r#"[{"agent_class":"DialogAgent","args":{"name":"assistant","sys_prompt":"be nice","model_config_name":"m"}},
                    {"agent_class":"UserAgent","args":{"name":"user"}}]"#,
            )
            .unwrap();
        let x = agents[1].reply(None).unwrap();
        assert_eq!(x.content().unwrap(), "hello");
        assert_eq!(agents[0].reply(Some(&x)).unwrap().content().unwrap(), "Hi!");
        assert_eq!(rt.monitor().get_usage("m").calls, 1);
        assert!(rt.agent("assistant").is_ok());
    }

    #[test]
    fn unknown_class_and_inline_model() {
        let rt = rt();
        let err = rt.create_agent(&AgentConfig::new("Nope").arg("name", "x")).err().unwrap();
        assert!(err.to_string().contains("Nope"));

        let local = DialogAgent::new("a", "", {
            let other = self::rt();
            other
                .register_models(vec![ModelConfig::scripted("inline", vec![ScriptedRule::respond("from inline")])])
                .unwrap();
            other.model("inline").unwrap()
        })
        .unwrap();
        let twin = rt.create_agent(&local.config().unwrap()).unwrap();
        let q: Message = Msg::new("u", "q").unwrap().into();
        assert_eq!(twin.reply(Some(&q)).unwrap().content().unwrap(), "from inline");
    }
}

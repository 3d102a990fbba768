//! Model backends and the invocation layer.
//!
//! A [`ModelBackend`] performs a single attempt. [`Model`] wraps a backend
//! with budget checks, retry on accessibility errors, usage metering, and
//! the `parse_func` / `fault_handler` / `max_retries` parsing loop.

mod config;
mod http;
mod parsers;
mod repair;
mod retry;
mod scripted;

use std::any::Any;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use config::{expand_env, ModelConfig, ModelRegistry, ModelType};
pub(crate) use config::parse_config_list;
pub use http::{HttpChatBackend, HttpEmbeddingBackend};
pub use parsers::{parse_fenced, parse_json_block, parse_tagged, TaggedContent};
pub use repair::repair_json;
pub use retry::{NoSleep, RecordingSleeper, RetryPolicy, Sleeper, ThreadSleeper};
pub use scripted::{whitespace_tokens, ScriptedBackend, ScriptedRule};

use crate::error::{Error, Result};
use crate::monitor::{Monitor, TokenUsage};
use crate::msg::{Msg, Role};

/// One chat turn as sent to a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMessage {
    pub role: Role,
    pub name: String,
    pub content: String,
}

impl PromptMessage {
    pub fn new(role: Role, name: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            role,
            name: name.into(),
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, "system", content)
    }
}

impl From<&Msg> for PromptMessage {
    fn from(m: &Msg) -> Self {
        Self::new(m.role(), m.name(), m.content())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelResponse {
    pub text: String,
    pub usage: TokenUsage,
    pub raw: Value,
    pub parsed: Option<Value>,
}

impl ModelResponse {
    pub fn new(text: impl Into<String>, usage: TokenUsage) -> Self {
        Self {
            text: text.into(),
            usage,
            raw: Value::Null,
            parsed: None,
        }
    }
}

/// A single-attempt model backend.
pub trait ModelBackend: Send + Sync {
    fn config_name(&self) -> &str;

    fn generate(&self, prompt: &[PromptMessage]) -> Result<ModelResponse>;

    fn embed(&self, _texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Err(Error::validation(format!(
            "model config '{}' does not provide embeddings",
            self.config_name()
        )))
    }

    fn as_any(&self) -> &dyn Any;
}

/// A backend bound to the runtime's retry policy and monitor.
#[derive(Clone)]
pub struct Model {
    backend: Arc<dyn ModelBackend>,
    retry: RetryPolicy,
    monitor: Arc<Monitor>,
    sleeper: Arc<dyn Sleeper>,
    config: Option<ModelConfig>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("config_name", &self.config_name())
            .field("retry", &self.retry)
            .finish()
    }
}

impl Model {
    pub fn new(
        backend: Arc<dyn ModelBackend>,
        retry: RetryPolicy,
        monitor: Arc<Monitor>,
        sleeper: Arc<dyn Sleeper>,
    ) -> Self {
        Self {
            backend,
            retry,
            monitor,
            sleeper,
            config: None,
        }
    }

    /// Attaches the config the backend was built from, so agents using this
    /// model can be re-created elsewhere.
    pub fn with_config(mut self, config: ModelConfig) -> Self {
        self.config = Some(config);
        self
    }

    pub fn model_config(&self) -> Option<&ModelConfig> {
        self.config.as_ref()
    }

    pub fn monitor(&self) -> &Arc<Monitor> {
        &self.monitor
    }

    pub fn config_name(&self) -> &str {
        self.backend.config_name()
    }

    pub fn backend(&self) -> &Arc<dyn ModelBackend> {
        &self.backend
    }

    pub fn retry_policy(&self) -> &RetryPolicy {
        &self.retry
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Invokes the backend with up to `1 + max_retries` attempts.
    ///
    /// Only accessibility errors are retried. The budget is checked once,
    /// before the first attempt; a blocked call makes no attempts.
    pub fn invoke(&self, prompt: &[PromptMessage]) -> Result<ModelResponse> {
        let name = self.config_name().to_string();
        self.monitor.check_budget(&name)?;
        let total = self.retry.max_retries + 1;
        let mut last_cause = String::new();
        for attempt in 1..=total {
            match self.backend.generate(prompt) {
                Ok(resp) => {
                    self.monitor.record_usage(&name, resp.usage);
                    return Ok(resp);
                }
                Err(e) if e.kind() == crate::error::ErrorKind::Accessibility => {
                    last_cause = match e {
                        Error::Accessibility { cause, .. } => cause,
                        other => other.to_string(),
                    };
                    if attempt < total {
                        self.sleeper.sleep(self.retry.backoff(attempt));
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Err(Error::Accessibility {
            attempts: total,
            cause: last_cause,
        })
    }

    /// Invokes, then parses; re-invokes on parse faults.
    ///
    /// At most `max_retries + 1` invocations are made. When every response
    /// fails to parse, `fault_handler` receives the last response; without a
    /// handler the last parse error is returned.
    pub fn invoke_with_parsing<T>(
        &self,
        prompt: &[PromptMessage],
        parse_func: impl Fn(&ModelResponse) -> Result<T>,
        fault_handler: Option<&dyn Fn(&ModelResponse) -> Result<T>>,
        max_retries: u32,
    ) -> Result<T> {
        let mut last: Option<(ModelResponse, Error)> = None;
        for _ in 0..=max_retries {
            let resp = self.invoke(prompt)?;
            match parse_func(&resp) {
                Ok(v) => return Ok(v),
                Err(e) => last = Some((resp, e)),
            }
        }
        let (resp, err) = last.expect("at least one invocation");
        match fault_handler {
            Some(handler) => handler(&resp),
            None => Err(err),
        }
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let total = self.retry.max_retries + 1;
        let mut last_cause = String::new();
        for attempt in 1..=total {
            match self.backend.embed(texts) {
                Ok(v) => return Ok(v),
                Err(e) if e.kind() == crate::error::ErrorKind::Accessibility => {
                    last_cause = e.to_string();
                    if attempt < total {
                        self.sleeper.sleep(self.retry.backoff(attempt));
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Err(Error::Accessibility {
            attempts: total,
            cause: last_cause,
        })
    }

    /// The scripted backend behind this model, if it is one.
    pub fn scripted(&self) -> Option<&ScriptedBackend> {
        self.backend.as_any().downcast_ref::<ScriptedBackend>()
    }
}

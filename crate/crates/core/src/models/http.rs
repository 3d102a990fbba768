//! Chat-completions and embeddings over HTTP.
//!
//! Targets the common `{base_url}/chat/completions` and
//! `{base_url}/embeddings` JSON shapes so any compatible vendor or local
//! server can be configured by URL.

use std::any::Any;
use std::time::Duration;

use serde_json::{json, Value};

use super::{ModelBackend, ModelConfig, ModelResponse, PromptMessage};
use crate::error::{Error, Result};
use crate::monitor::TokenUsage;

fn http_agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(120)))
        .http_status_as_error(false)
        .build()
        .into()
}

fn post_json(agent: &ureq::Agent, url: &str, api_key: Option<&str>, body: &Value) -> Result<Value> {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(key) = api_key.filter(|k| !k.is_empty()) {
        req = req.header("Authorization", &format!("Bearer {key}"));
    }
    let mut resp = req.send_json(body).map_err(|e| Error::Accessibility {
        attempts: 1,
        cause: format!("POST {url}: {e}"),
    })?;
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().unwrap_or_default();
    match status {
        200..=299 => serde_json::from_str(&text).map_err(|e| Error::Unresolvable(format!("{url}: invalid JSON body: {e}"))),
        408 | 429 | 500..=599 => Err(Error::Accessibility {
            attempts: 1,
            cause: format!("POST {url}: HTTP {status}"),
        }),
        _ => Err(Error::Unresolvable(format!("POST {url}: HTTP {status}: {text}"))),
    }
}

fn endpoint(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path)
}

#[derive(Debug)]
pub struct HttpChatBackend {
    config_name: String,
    url: String,
    api_key: Option<String>,
    model_id: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatBackend {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config_name: config.config_name.clone(),
            url: endpoint(config.base_url.as_deref().unwrap_or_default(), "chat/completions"),
            api_key: config.api_key.clone(),
            model_id: config.model_id.clone(),
            agent: http_agent(),
        })
    }
}

impl ModelBackend for HttpChatBackend {
    fn config_name(&self) -> &str {
        &self.config_name
    }

    fn generate(&self, prompt: &[PromptMessage]) -> Result<ModelResponse> {
        let messages: Vec<Value> = prompt
            .iter()
            .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
            .collect();
        let mut body = json!({ "messages": messages });
        if let Some(model) = &self.model_id {
            body["model"] = Value::String(model.clone());
        }
        let raw = post_json(&self.agent, &self.url, self.api_key.as_deref(), &body)?;
        let text = raw
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Unresolvable(format!("{}: response has no choices[0].message.content", self.url)))?
            .to_string();
        let usage = TokenUsage {
            prompt: raw.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
            completion: raw.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0),
        };
        Ok(ModelResponse {
            text,
            usage,
            raw,
            parsed: None,
        })
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[derive(Debug)]
pub struct HttpEmbeddingBackend {
    config_name: String,
    url: String,
    api_key: Option<String>,
    model_id: Option<String>,
    agent: ureq::Agent,
}

impl HttpEmbeddingBackend {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config_name: config.config_name.clone(),
            url: endpoint(config.base_url.as_deref().unwrap_or_default(), "embeddings"),
            api_key: config.api_key.clone(),
            model_id: config.model_id.clone(),
            agent: http_agent(),
        })
    }
}

impl ModelBackend for HttpEmbeddingBackend {
    fn config_name(&self) -> &str {
        &self.config_name
    }

    fn generate(&self, _prompt: &[PromptMessage]) -> Result<ModelResponse> {
        Err(Error::validation(format!(
            "model config '{}' is an embedding model",
            self.config_name
        )))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let mut body = json!({ "input": texts });
        if let Some(model) = &self.model_id {
            body["model"] = Value::String(model.clone());
        }
        let raw = post_json(&self.agent, &self.url, self.api_key.as_deref(), &body)?;
        let data = raw
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Unresolvable(format!("{}: response has no data array", self.url)))?;
        data.iter()
            .map(|d| {
                d.get("embedding")
                    .and_then(Value::as_array)
                    .map(|v| v.iter().map(|x| x.as_f64().unwrap_or(0.0) as f32).collect())
                    .ok_or_else(|| Error::Unresolvable(format!("{}: entry without embedding", self.url)))
            })
            .collect()
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

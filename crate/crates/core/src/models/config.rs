use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use super::http::{HttpChatBackend, HttpEmbeddingBackend};
use super::scripted::{ScriptedBackend, ScriptedRule};
use super::ModelBackend;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelType {
    HttpChat,
    HttpEmbedding,
    Scripted,
}

/// One entry of `model_configs.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub config_name: String,
    pub model_type: ModelType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub script: Vec<ScriptedRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price_per_1k_tokens: Option<f64>,
    /// Fixed delay added to every scripted call.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
    /// Dimension of scripted (hashed bag-of-words) embeddings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
}

impl ModelConfig {
    pub fn scripted(config_name: impl Into<String>, script: Vec<ScriptedRule>) -> Self {
        Self {
            config_name: config_name.into(),
            model_type: ModelType::Scripted,
            base_url: None,
            api_key: None,
            model_id: None,
            script,
            price_per_1k_tokens: None,
            latency_ms: None,
            embedding_dim: None,
        }
    }

    pub fn http_chat(config_name: impl Into<String>, base_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            model_type: ModelType::HttpChat,
            base_url: Some(base_url.into()),
            model_id: Some(model_id.into()),
            ..Self::scripted(config_name, Vec::new())
        }
    }

    pub fn with_latency_ms(mut self, ms: u64) -> Self {
        self.latency_ms = Some(ms);
        self
    }

    pub fn with_price(mut self, per_1k: f64) -> Self {
        self.price_per_1k_tokens = Some(per_1k);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.config_name.is_empty() {
            return Err(Error::validation("model config missing field: config_name"));
        }
        match self.model_type {
            ModelType::HttpChat | ModelType::HttpEmbedding => {
                if self.base_url.as_deref().map_or(true, str::is_empty) {
                    return Err(Error::validation(format!(
                        "model config '{}' missing field: base_url",
                        self.config_name
                    )));
                }
            }
            ModelType::Scripted => {}
        }
        Ok(())
    }

    pub fn build_backend(&self) -> Result<Arc<dyn ModelBackend>> {
        self.validate()?;
        Ok(match self.model_type {
            ModelType::Scripted => Arc::new(ScriptedBackend::new(self)),
            ModelType::HttpChat => Arc::new(HttpChatBackend::new(self)?),
            ModelType::HttpEmbedding => Arc::new(HttpEmbeddingBackend::new(self)?),
        })
    }
}

/// Replaces `${VAR}` with the environment value (empty when unset).
pub fn expand_env(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        match rest[start + 2..].find('}') {
            Some(end) => {
                let var = &rest[start + 2..start + 2 + end];
                out.push_str(&std::env::var(var).unwrap_or_default());
                rest = &rest[start + 2 + end + 1..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

struct Entry {
    config: ModelConfig,
    backend: Arc<dyn ModelBackend>,
}

/// Config registry. Each config gets one shared backend instance.
#[derive(Default)]
pub struct ModelRegistry {
    entries: RwLock<HashMap<String, Entry>>,
    order: RwLock<Vec<String>>,
}

impl std::fmt::Debug for ModelRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelRegistry").field("names", &self.names()).finish()
    }
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers every config, rejecting duplicates (within the batch and
    /// against what is already registered). Nothing is registered on error.
    pub fn register_all(&self, configs: Vec<ModelConfig>) -> Result<Vec<String>> {
        let mut seen = std::collections::HashSet::new();
        {
            let entries = self.entries.read().unwrap();
            for c in &configs {
                c.validate()?;
                if !seen.insert(c.config_name.clone()) || entries.contains_key(&c.config_name) {
                    return Err(Error::validation(format!(
                        "duplicate model config_name: {}",
                        c.config_name
                    )));
                }
            }
        }
        let mut built = Vec::with_capacity(configs.len());
        for c in configs {
            let backend = c.build_backend()?;
            built.push(Entry { config: c, backend });
        }
        let mut entries = self.entries.write().unwrap();
        let mut order = self.order.write().unwrap();
        let mut names = Vec::new();
        for e in built {
            let name = e.config.config_name.clone();
            order.push(name.clone());
            names.push(name.clone());
            entries.insert(name, e);
        }
        Ok(names)
    }

    pub fn register(&self, config: ModelConfig) -> Result<()> {
        self.register_all(vec![config]).map(|_| ())
    }

    /// Reads a JSON array of configs (with `${VAR}` expansion in
    /// `api_key`/`base_url`).
    pub fn register_file(&self, path: impl AsRef<Path>) -> Result<Vec<String>> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let configs = parse_config_list(&text)?;
        self.register_all(configs)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.read().unwrap().contains_key(name)
    }

    pub fn config(&self, name: &str) -> Result<ModelConfig> {
        self.entries
            .read()
            .unwrap()
            .get(name)
            .map(|e| e.config.clone())
            .ok_or_else(|| Error::validation(format!("unknown model config: {name}")))
    }

    pub fn backend(&self, name: &str) -> Result<Arc<dyn ModelBackend>> {
        self.entries
            .read()
            .unwrap()
            .get(name)
            .map(|e| e.backend.clone())
            .ok_or_else(|| Error::validation(format!("unknown model config: {name}")))
    }

    pub fn names(&self) -> Vec<String> {
        self.order.read().unwrap().clone()
    }
}

pub(crate) fn parse_config_list(text: &str) -> Result<Vec<ModelConfig>> {
    let raw: serde_json::Value = serde_json::from_str(text)?;
    let items = match raw {
        serde_json::Value::Array(items) => items,
        obj @ serde_json::Value::Object(_) => vec![obj],
        _ => return Err(Error::validation("model configs must be a JSON array")),
    };
    items
        .into_iter()
        .map(|v| {
            let mut c: ModelConfig = serde_json::from_value(v)
                .map_err(|e| Error::validation(format!("invalid model config: {e}")))?;
            c.api_key = c.api_key.map(|k| expand_env(&k));
            c.base_url = c.base_url.map(|u| expand_env(&u));
            Ok(c)
        })
        .collect()
}

//! Deterministic scripted backend.
//!
//! Rules are tried first-match in order against the content of the last
//! prompt message. A rule with `fail_times = n` fails its first `n` matches
//! with an accessibility error. A rule with `max_uses` stops matching once
//! it has answered that many times, which lets a script play out a fixed
//! sequence of turns.
//!
//! `respond` may contain `{prompt}` (every prompt message's content, one per
//! line) and `{last}` (the last message's content).

use std::any::Any;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ModelBackend, ModelConfig, ModelResponse, PromptMessage};
use crate::error::{Error, Result};
use crate::knowledge::hashed_bow;
use crate::monitor::TokenUsage;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when_contains: Option<String>,
    pub respond: String,
    #[serde(default)]
    pub fail_times: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_uses: Option<u32>,
}

impl ScriptedRule {
    pub fn respond(text: impl Into<String>) -> Self {
        Self {
            when_contains: None,
            respond: text.into(),
            fail_times: 0,
            max_uses: None,
        }
    }

    pub fn when(mut self, needle: impl Into<String>) -> Self {
        self.when_contains = Some(needle.into());
        self
    }

    pub fn failing(mut self, times: u32) -> Self {
        self.fail_times = times;
        self
    }

    pub fn uses(mut self, n: u32) -> Self {
        self.max_uses = Some(n);
        self
    }

    /// One single-use rule per reply, in order.
    pub fn sequence<I, S>(replies: I) -> Vec<ScriptedRule>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        replies.into_iter().map(|r| ScriptedRule::respond(r).uses(1)).collect()
    }
}

pub fn whitespace_tokens(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

#[derive(Debug, Default)]
struct RuleState {
    failures: Vec<u32>,
    uses: Vec<u32>,
}

#[derive(Debug)]
pub struct ScriptedBackend {
    config_name: String,
    rules: Vec<ScriptedRule>,
    latency: Option<Duration>,
    embedding_dim: usize,
    state: Mutex<RuleState>,
    requests: Mutex<Vec<Vec<PromptMessage>>>,
    attempts: AtomicU64,
    successes: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    embed_calls: AtomicU64,
}

impl ScriptedBackend {
    pub fn new(config: &ModelConfig) -> Self {
        let n = config.script.len();
        Self {
            config_name: config.config_name.clone(),
            rules: config.script.clone(),
            latency: config.latency_ms.map(Duration::from_millis),
            embedding_dim: config.embedding_dim.unwrap_or(crate::knowledge::MOCK_EMBEDDING_DIM),
            state: Mutex::new(RuleState {
                failures: vec![0; n],
                uses: vec![0; n],
            }),
            requests: Mutex::new(Vec::new()),
            attempts: AtomicU64::new(0),
            successes: AtomicU64::new(0),
            prompt_tokens: AtomicU64::new(0),
            completion_tokens: AtomicU64::new(0),
            embed_calls: AtomicU64::new(0),
        }
    }

    /// Every `generate` call, including failed ones.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::SeqCst)
    }

    pub fn successes(&self) -> u64 {
        self.successes.load(Ordering::SeqCst)
    }

    pub fn prompt_tokens(&self) -> u64 {
        self.prompt_tokens.load(Ordering::SeqCst)
    }

    pub fn completion_tokens(&self) -> u64 {
        self.completion_tokens.load(Ordering::SeqCst)
    }

    pub fn embed_calls(&self) -> u64 {
        self.embed_calls.load(Ordering::SeqCst)
    }

    /// Prompts received, in call order.
    pub fn requests(&self) -> Vec<Vec<PromptMessage>> {
        self.requests.lock().unwrap().clone()
    }

    pub fn last_request(&self) -> Option<Vec<PromptMessage>> {
        self.requests.lock().unwrap().last().cloned()
    }
}

fn render(template: &str, prompt: &[PromptMessage]) -> String {
    if !template.contains('{') {
        return template.to_string();
    }
    let all = prompt.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n");
    let last = prompt.last().map(|m| m.content.as_str()).unwrap_or("");
    template.replace("{prompt}", &all).replace("{last}", last)
}

impl ModelBackend for ScriptedBackend {
    fn config_name(&self) -> &str {
        &self.config_name
    }

    fn generate(&self, prompt: &[PromptMessage]) -> Result<ModelResponse> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        self.requests.lock().unwrap().push(prompt.to_vec());
        let last = prompt.last().map(|m| m.content.as_str()).unwrap_or("");
        let outcome = {
            let mut st = self.state.lock().unwrap();
            let idx = self.rules.iter().enumerate().position(|(i, r)| {
                let exhausted = r.max_uses.is_some_and(|max| st.uses[i] >= max);
                !exhausted && r.when_contains.as_deref().map_or(true, |n| last.contains(n))
            });
            match idx {
                None => Err(Error::Internal(format!(
                    "scripted model '{}': no rule matches request",
                    self.config_name
                ))),
                Some(i) if st.failures[i] < self.rules[i].fail_times => {
                    st.failures[i] += 1;
                    Err(Error::Accessibility {
                        attempts: 1,
                        cause: format!("scripted transient failure {} of rule {i}", st.failures[i]),
                    })
                }
                Some(i) => {
                    st.uses[i] += 1;
                    Ok(render(&self.rules[i].respond, prompt))
                }
            }
        };
        if let Some(d) = self.latency {
            std::thread::sleep(d);
        }
        let text = outcome?;
        let usage = TokenUsage {
            prompt: prompt.iter().map(|m| whitespace_tokens(&m.content)).sum(),
            completion: whitespace_tokens(&text),
        };
        self.successes.fetch_add(1, Ordering::SeqCst);
        self.prompt_tokens.fetch_add(usage.prompt, Ordering::SeqCst);
        self.completion_tokens.fetch_add(usage.completion, Ordering::SeqCst);
        Ok(ModelResponse::new(text, usage))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        self.embed_calls.fetch_add(1, Ordering::SeqCst);
        Ok(texts.iter().map(|t| hashed_bow(t, self.embedding_dim)).collect())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

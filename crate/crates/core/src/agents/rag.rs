use std::sync::Arc;

use super::dialog::model_args;
use super::{Agent, AgentConfig, AgentCore};
use crate::error::{Error, Result};
use crate::knowledge::{fused_retrieve, KnowledgeObject, Retrieved};
use crate::models::{Model, PromptMessage};
use crate::monitor::ChatLogger;
use crate::msg::{Message, Msg, Role};

/// Marker text of the query-recomposition request.
pub const RECOMPOSE_MARKER: &str = "Rewrite the query";

/// Answers with retrieved knowledge in the prompt.
///
/// Each reply runs `repeats` retrieval rounds: the first uses the incoming
/// content as the query, later ones ask the model to recompose the query
/// from what was retrieved so far. Retrieved chunks are unioned (first
/// occurrence wins) and rendered as `[source_path#chunk_id] text`.
pub struct RagAgent {
    core: AgentCore,
    sys_prompt: String,
    model: Model,
    sources: Vec<(Arc<KnowledgeObject>, f64)>,
    top_k: usize,
    repeats: usize,
}

impl std::fmt::Debug for RagAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RagAgent")
            .field("name", &self.core.name())
            .field("sources", &self.sources.len())
            .finish()
    }
}

impl RagAgent {
    pub fn new(
        name: impl Into<String>,
        sys_prompt: impl Into<String>,
        model: Model,
        sources: Vec<(Arc<KnowledgeObject>, f64)>,
    ) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::validation("RAG agent needs at least one knowledge object"));
        }
        Ok(Self {
            core: AgentCore::new(name)?,
            sys_prompt: sys_prompt.into(),
            model,
            sources,
            top_k: 3,
            repeats: 1,
        })
    }

    pub fn with_top_k(mut self, k: usize) -> Self {
        self.top_k = k.max(1);
        self
    }

    pub fn with_repeats(mut self, repeats: usize) -> Result<Self> {
        if repeats == 0 {
            return Err(Error::validation("repeats must be at least 1"));
        }
        self.repeats = repeats;
        Ok(self)
    }

    pub fn with_logger(mut self, logger: Option<Arc<ChatLogger>>) -> Self {
        self.core = self.core.with_logger(logger);
        self
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// The retrieval half of a reply: rounds of (recompose, retrieve).
    pub fn retrieve_context(&self, query: &str) -> Result<Vec<Retrieved>> {
        let sources: Vec<(&KnowledgeObject, f64)> = self.sources.iter().map(|(o, w)| (o.as_ref(), *w)).collect();
        let mut union: Vec<Retrieved> = Vec::new();
        let mut q = query.to_string();
        for round in 0..self.repeats {
            if round > 0 {
                let request = format!(
                    "{RECOMPOSE_MARKER} so that it retrieves more relevant context.\nPrevious query: {q}\nRetrieved context:\n{}\nReply with the new query only.",
                    render_context(&union)
                );
                q = self
                    .model
                    .invoke(&[PromptMessage::new(Role::User, "user", request)])?
                    .text
                    .trim()
                    .to_string();
            }
            for hit in fused_retrieve(&sources, &q, self.top_k)? {
                let dup = union
                    .iter()
                    .any(|u| u.knowledge_id == hit.knowledge_id && u.entry.chunk_id == hit.entry.chunk_id);
                if !dup {
                    union.push(hit);
                }
            }
        }
        Ok(union)
    }
}

pub fn render_context(hits: &[Retrieved]) -> String {
    hits.iter().map(Retrieved::render).collect::<Vec<_>>().join("\n")
}

impl Agent for RagAgent {
    fn name(&self) -> &str {
        self.core.name()
    }

    fn reply(&self, x: Option<&Message>) -> Result<Message> {
        let _turn = self.core.turn();
        let run = || -> Result<Msg> {
            let input = self.core.record_input(x)?;
            let query = input.as_ref().map(|m| m.content().to_string()).unwrap_or_default();
            let hits = self.retrieve_context(&query)?;
            let mut prompt = Vec::new();
            if !self.sys_prompt.is_empty() {
                prompt.push(PromptMessage::system(self.sys_prompt.clone()));
            }
            prompt.push(PromptMessage::system(format!("Retrieved context:\n{}", render_context(&hits))));
            prompt.extend(self.core.memory().iter().map(PromptMessage::from));
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
        let ids: Vec<String> = self.sources.iter().map(|(o, _)| o.knowledge_id().to_string()).collect();
        let weights: Vec<f64> = self.sources.iter().map(|(_, w)| *w).collect();
        let mut cfg = AgentConfig::new("RAGAgent")
            .arg("name", self.name())
            .arg("sys_prompt", self.sys_prompt.as_str())
            .arg("knowledge_ids", ids)
            .arg("knowledge_weights", weights)
            .arg("top_k", self.top_k)
            .arg("repeats", self.repeats);
        model_args(&self.model, &mut cfg.args);
        Some(cfg)
    }
}

use std::sync::Arc;

use super::dialog::model_args;
use super::{Agent, AgentConfig, AgentCore};
use crate::error::Result;
use crate::models::{Model, PromptMessage};
use crate::monitor::{ChatLogger, FileManager};
use crate::msg::{Message, Msg, Role};

/// Turns its input into an image reference.
///
/// The model's output is either a URL, attached as-is, or the image payload
/// itself, which is stored in the file manager and attached by `file://` URL.
pub struct TextToImageAgent {
    core: AgentCore,
    model: Model,
    files: Arc<FileManager>,
    extension: String,
}

impl std::fmt::Debug for TextToImageAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TextToImageAgent").field("name", &self.core.name()).finish()
    }
}

impl TextToImageAgent {
    pub fn new(name: impl Into<String>, model: Model, files: Arc<FileManager>) -> Result<Self> {
        Ok(Self {
            core: AgentCore::new(name)?,
            model,
            files,
            extension: "svg".into(),
        })
    }

    /// Extension for stored payloads (default `svg`).
    pub fn with_extension(mut self, ext: impl Into<String>) -> Self {
        self.extension = ext.into();
        self
    }

    pub fn with_logger(mut self, logger: Option<Arc<ChatLogger>>) -> Self {
        self.core = self.core.with_logger(logger);
        self
    }
}

fn is_url(s: &str) -> bool {
    ["http://", "https://", "file://"].iter().any(|p| s.starts_with(p))
}

impl Agent for TextToImageAgent {
    fn name(&self) -> &str {
        self.core.name()
    }

    fn reply(&self, x: Option<&Message>) -> Result<Message> {
        let _turn = self.core.turn();
        let run = || -> Result<Msg> {
            let input = self.core.record_input(x)?;
            let description = input.as_ref().map(|m| m.content().to_string()).unwrap_or_default();
            let resp = self.model.invoke(&[PromptMessage::new(Role::User, "user", description.clone())])?;
            let out = resp.text.trim();
            let url = if is_url(out) {
                out.to_string()
            } else {
                self.files.save_artifact(out.as_bytes(), &self.extension)?
            };
            Msg::builder(self.name(), format!("Image for: {description}")).url(url).build()
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
        let mut cfg = AgentConfig::new("TextToImageAgent")
            .arg("name", self.name())
            .arg("extension", self.extension.as_str());
        model_args(&self.model, &mut cfg.args);
        Some(cfg)
    }
}

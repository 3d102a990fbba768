use std::sync::Arc;

use super::{Agent, AgentConfig, AgentCore};
use crate::error::Result;
use crate::monitor::ChatLogger;
use crate::msg::{Message, Msg};

/// Replies with the content of its input (empty when speaking first).
#[derive(Debug)]
pub struct EchoAgent {
    core: AgentCore,
}

impl EchoAgent {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        Ok(Self {
            core: AgentCore::new(name)?,
        })
    }

    pub fn with_logger(mut self, logger: Option<Arc<ChatLogger>>) -> Self {
        self.core = self.core.with_logger(logger);
        self
    }
}

impl Agent for EchoAgent {
    fn name(&self) -> &str {
        self.core.name()
    }

    fn reply(&self, x: Option<&Message>) -> Result<Message> {
        let _turn = self.core.turn();
        let input = self.core.record_input(x).map_err(|e| e.in_agent(self.name()))?;
        let content = input.as_ref().map(|m| m.content().to_string()).unwrap_or_default();
        let msg = self.core.message(content)?;
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
        Some(AgentConfig::new("EchoAgent").arg("name", self.name()))
    }
}

type ReplyFn = dyn Fn(Option<&Msg>, &[Msg]) -> Result<String> + Send + Sync;

/// An agent whose reply content is computed by a closure over the input and
/// the memory (input included).
pub struct FnAgent {
    core: AgentCore,
    f: Box<ReplyFn>,
}

impl std::fmt::Debug for FnAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnAgent").field("name", &self.core.name()).finish()
    }
}

impl FnAgent {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(Option<&Msg>, &[Msg]) -> Result<String> + Send + Sync + 'static,
    ) -> Result<Self> {
        Ok(Self {
            core: AgentCore::new(name)?,
            f: Box::new(f),
        })
    }

    pub fn with_logger(mut self, logger: Option<Arc<ChatLogger>>) -> Self {
        self.core = self.core.with_logger(logger);
        self
    }
}

impl Agent for FnAgent {
    fn name(&self) -> &str {
        self.core.name()
    }

    fn reply(&self, x: Option<&Message>) -> Result<Message> {
        let _turn = self.core.turn();
        let run = || -> Result<Msg> {
            let input = self.core.record_input(x)?;
            let content = (self.f)(input.as_ref(), &self.core.memory())?;
            self.core.message(content)
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
}

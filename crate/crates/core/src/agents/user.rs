use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use super::{Agent, AgentConfig, AgentCore};
use crate::error::{Error, Result};
use crate::monitor::ChatLogger;
use crate::msg::{Message, Msg, Role};

/// Where a [`UserAgent`] gets its turns from.
pub trait InputSource: Send + Sync {
    /// Blocks for one line of input. `timeout = None` waits indefinitely.
    fn read(&self, agent: &str, prompt: &str, timeout: Option<Duration>) -> Result<String>;
}

/// A queue of pre-scripted inputs that can also be fed while running.
///
/// An empty queue with no timeout is an error rather than a hang.
#[derive(Debug, Default)]
pub struct ScriptedInput {
    queue: Mutex<VecDeque<String>>,
    ready: Condvar,
}

impl ScriptedInput {
    pub fn new<I, S>(inputs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            queue: Mutex::new(inputs.into_iter().map(Into::into).collect()),
            ready: Condvar::new(),
        }
    }

    pub fn push(&self, input: impl Into<String>) {
        self.queue.lock().unwrap().push_back(input.into());
        self.ready.notify_all();
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }
}

impl InputSource for ScriptedInput {
    fn read(&self, agent: &str, _prompt: &str, timeout: Option<Duration>) -> Result<String> {
        let mut q = self.queue.lock().unwrap();
        let Some(limit) = timeout else {
            return q
                .pop_front()
                .ok_or_else(|| Error::Timeout(format!("{agent}: scripted input exhausted")));
        };
        let deadline = Instant::now() + limit;
        loop {
            if let Some(s) = q.pop_front() {
                return Ok(s);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(Error::Timeout(format!(
                    "{agent}: no input within {:.3}s",
                    limit.as_secs_f64()
                )));
            }
            q = self.ready.wait_timeout(q, deadline - now).unwrap().0;
        }
    }
}

/// Reads lines from standard input.
#[derive(Debug, Default, Clone, Copy)]
pub struct StdinInput;

impl InputSource for StdinInput {
    fn read(&self, agent: &str, prompt: &str, timeout: Option<Duration>) -> Result<String> {
        if !prompt.is_empty() {
            eprint!("{prompt}");
        }
        eprint!("{agent}: ");
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let mut line = String::new();
            let r = std::io::stdin().read_line(&mut line).map(|_| line);
            let _ = tx.send(r);
        });
        let got = match timeout {
            Some(t) => rx
                .recv_timeout(t)
                .map_err(|_| Error::Timeout(format!("{agent}: user has not typed text for {:.0}s", t.as_secs_f64())))?,
            None => rx.recv().map_err(|_| Error::Internal("stdin reader vanished".into()))?,
        };
        let line = got?;
        Ok(line.trim_end_matches(['\r', '\n']).to_string())
    }
}

/// Proxy of a human participant.
pub struct UserAgent {
    core: AgentCore,
    source: Arc<dyn InputSource>,
    timeout: Option<Duration>,
    prompt: String,
}

impl std::fmt::Debug for UserAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UserAgent").field("name", &self.core.name()).finish()
    }
}

impl UserAgent {
    pub fn new(name: impl Into<String>, source: Arc<dyn InputSource>) -> Result<Self> {
        Ok(Self {
            core: AgentCore::new(name)?,
            source,
            timeout: None,
            prompt: String::new(),
        })
    }

    pub fn with_timeout(mut self, timeout: Option<Duration>) -> Self {
        self.timeout = timeout;
        self
    }

    /// Text shown to the human with each request.
    pub fn with_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.prompt = prompt.into();
        self
    }

    pub fn with_logger(mut self, logger: Option<Arc<ChatLogger>>) -> Self {
        self.core = self.core.with_logger(logger);
        self
    }

    /// One turn with an explicit timeout.
    pub fn user_reply(&self, x: Option<&Message>, timeout: Option<Duration>) -> Result<Msg> {
        let _turn = self.core.turn();
        let input = self.core.record_input(x).map_err(|e| e.in_agent(self.name()))?;
        let prompt = match (&input, self.prompt.is_empty()) {
            (Some(m), true) => m.to_string(),
            _ => self.prompt.clone(),
        };
        let content = self
            .source
            .read(self.name(), &prompt, timeout)
            .map_err(|e| e.in_agent(self.name()))?;
        let msg = Msg::builder(self.name(), content).role(Role::User).build()?;
        self.core.record(msg.clone());
        self.core.speak(&msg);
        Ok(msg)
    }
}

impl Agent for UserAgent {
    fn name(&self) -> &str {
        self.core.name()
    }

    fn reply(&self, x: Option<&Message>) -> Result<Message> {
        self.user_reply(x, self.timeout).map(Message::from)
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
        None
    }
}

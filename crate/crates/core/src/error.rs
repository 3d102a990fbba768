//! Crate-wide error type.
//!
//! Errors carry an [`ErrorKind`] so that failures raised inside an agent
//! server can be shipped over the wire and re-raised on the client with the
//! same classification.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::msg::Msg;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error classification, stable across process boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Validation,
    Deserialize,
    Accessibility,
    RuleResolvable,
    StructuredResponse,
    Timeout,
    BudgetExceeded,
    LoopGuard,
    ReactIncomplete,
    ToolRuntime,
    WorkflowInvalid,
    Aborted,
    Unresolvable,
    Io,
    Internal,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Validation => "validation",
            Self::Deserialize => "deserialize",
            Self::Accessibility => "accessibility",
            Self::RuleResolvable => "rule_resolvable",
            Self::StructuredResponse => "structured_response",
            Self::Timeout => "timeout",
            Self::BudgetExceeded => "budget_exceeded",
            Self::LoopGuard => "loop_guard",
            Self::ReactIncomplete => "react_incomplete",
            Self::ToolRuntime => "tool_runtime",
            Self::WorkflowInvalid => "workflow_invalid",
            Self::Aborted => "aborted",
            Self::Unresolvable => "unresolvable",
            Self::Io => "io",
            Self::Internal => "internal",
        }
    }
}

impl std::fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    /// Malformed wire data. The message names the offending field.
    #[error("{0}")]
    Deserialize(String),

    /// A backend or server could not be reached after all attempts.
    #[error("accessibility error after {attempts} attempt(s): {cause}")]
    Accessibility { attempts: u32, cause: String },

    /// Model output that format rules could not repair.
    #[error("rule-resolvable error: {reason}")]
    RuleResolvable { reason: String, text: String },

    #[error("structured response missing key(s): {}", missing.join(", "))]
    StructuredResponse { missing: Vec<String>, last_text: String },

    #[error("timeout: {0}")]
    Timeout(String),

    #[error("budget exceeded for '{scope}': {metric} {value} > {threshold}")]
    BudgetExceeded {
        scope: String,
        metric: String,
        value: f64,
        threshold: f64,
    },

    #[error("loop guard: iteration bound {0} exceeded")]
    LoopGuard(usize),

    #[error("ReAct loop incomplete after {iterations} iteration(s)")]
    ReactIncomplete { iterations: usize, trace: Vec<Msg> },

    /// A toolkit-level failure that is not the model's fault.
    #[error("tool runtime error: {0}")]
    ToolRuntime(String),

    #[error("agent '{agent}': {source}")]
    Agent {
        agent: String,
        #[source]
        source: Box<Error>,
    },

    #[error("pipeline step {position}: {source}")]
    Pipeline {
        position: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("node '{node}': {source}")]
    Node {
        node: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid workflow:\n{0}")]
    WorkflowInvalid(crate::workflow::ValidationReport),

    /// An error raised on a remote agent server, re-raised locally.
    #[error("remote {kind} error: {message}")]
    Remote { kind: ErrorKind, message: String },

    #[error("aborted: {0}")]
    Aborted(String),

    /// Needs a human: bad credentials, misconfigured endpoint.
    #[error("unresolvable error: {0}")]
    Unresolvable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Self::Validation(msg.into())
    }

    /// Classification of the innermost cause.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Self::Validation(_) => ErrorKind::Validation,
            Self::Deserialize(_) | Self::Json(_) => ErrorKind::Deserialize,
            Self::Accessibility { .. } => ErrorKind::Accessibility,
            Self::RuleResolvable { .. } => ErrorKind::RuleResolvable,
            Self::StructuredResponse { .. } => ErrorKind::StructuredResponse,
            Self::Timeout(_) => ErrorKind::Timeout,
            Self::BudgetExceeded { .. } => ErrorKind::BudgetExceeded,
            Self::LoopGuard(_) => ErrorKind::LoopGuard,
            Self::ReactIncomplete { .. } => ErrorKind::ReactIncomplete,
            Self::ToolRuntime(_) => ErrorKind::ToolRuntime,
            Self::Agent { source, .. } | Self::Pipeline { source, .. } | Self::Node { source, .. } => {
                source.kind()
            }
            Self::WorkflowInvalid(_) => ErrorKind::WorkflowInvalid,
            Self::Remote { kind, .. } => *kind,
            Self::Aborted(_) => ErrorKind::Aborted,
            Self::Unresolvable(_) => ErrorKind::Unresolvable,
            Self::Io(_) => ErrorKind::Io,
            Self::Internal(_) => ErrorKind::Internal,
        }
    }

    /// Strips agent/pipeline/node wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Self::Agent { source, .. } | Self::Pipeline { source, .. } | Self::Node { source, .. } => {
                source.root()
            }
            other => other,
        }
    }

    pub(crate) fn in_agent(self, agent: &str) -> Self {
        match self {
            already @ Self::Agent { .. } => already,
            other => Self::Agent {
                agent: agent.to_string(),
                source: Box::new(other),
            },
        }
    }

    /// Tags the error with the workflow node it came from.
    pub fn at_node(self, node: &str) -> Self {
        Self::Node {
            node: node.to_string(),
            source: Box::new(self),
        }
    }
}

/// Wire representation of an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub kind: ErrorKind,
    pub message: String,
}

impl From<&Error> for WireError {
    fn from(e: &Error) -> Self {
        let message = match e.root() {
            Error::Remote { message, .. } => message.clone(),
            root => root.to_string(),
        };
        Self {
            kind: e.kind(),
            message,
        }
    }
}

impl From<WireError> for Error {
    fn from(w: WireError) -> Self {
        Self::Remote {
            kind: w.kind,
            message: w.message,
        }
    }
}

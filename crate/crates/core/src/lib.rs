//! A multi-agent orchestration runtime.
//!
//! Agents exchange [`msg::Msg`] values, are composed with pipelines and
//! message hubs, call models through a fault-tolerant wrapper, use tools,
//! retrieve from knowledge banks, and can be moved onto agent servers
//! without changing the orchestration code.

pub mod agents;
pub mod error;
pub mod knowledge;
pub mod models;
pub mod monitor;
pub mod msg;
pub mod pipelines;
pub mod rpc;
pub mod runtime;
pub mod services;
pub mod studio;
pub mod workflow;

pub use error::{Error, ErrorKind, Result};

/// The names most programs need.
pub mod prelude {
    pub use crate::agents::{Agent, AgentConfig, DialogAgent, DictDialogAgent, EchoAgent, UserAgent};
    pub use crate::error::{Error, ErrorKind, Result};
    pub use crate::msg::{Message, Msg, Role};
    pub use crate::pipelines::{sequential, MsgHub, Op, Operator};
    pub use crate::rpc::{to_dist, DistTarget};
    pub use crate::runtime::Runtime;
}

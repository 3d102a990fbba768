//! Actor-based distribution: agent servers, remote proxies and the studio
//! emitter.
//!
//! A server hosts agents behind per-agent mailboxes. A [`RemoteAgent`] is a
//! local proxy that forwards `reply`/`observe` over HTTP and hands back a
//! placeholder immediately, so several remote agents can work in parallel
//! until their results are actually read.

pub(crate) mod client;
mod emitter;
mod server;

pub use client::{
    config_to_dist, fetch_task, health, shutdown_server, to_dist, to_dist_alongside, DistTarget, LaunchedServer,
    RemoteAgent,
};
pub use emitter::StudioEmitter;
pub use server::{AgentServer, ServerConfig, ShutdownReport};

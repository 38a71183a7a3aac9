//! Client and loopback server for the token-statistics protocol.

mod client;
pub mod protocol;
mod server;

pub use client::{BackendDescriptor, RemoteBackend, RemoteBackendConfig};
pub use server::{LoopbackServer, ServerHandle};

use thiserror::Error;

pub const ENDPOINT_ENV: &str = "HLSCORE_ENDPOINT";

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("cannot connect to {url} after {attempts} attempt(s): {message}")]
    Connection {
        url: String,
        attempts: usize,
        message: String,
    },
    #[error("transport failure talking to {url} after {attempts} attempt(s): {message}")]
    Transport {
        url: String,
        attempts: usize,
        message: String,
    },
    #[error("server returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid remote configuration: {0}")]
    Config(String),
    #[error("server error: {0}")]
    Server(String),
}

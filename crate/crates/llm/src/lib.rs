//! Chat-completions adapters for the tollgate engine and oracles.
//!
//! One [`ChatClient`] per endpoint backs a policy, a world model, a
//! conditional generator and an intention predictor. Only text is produced
//! here; tool execution and charging stay in the engine.

mod adapters;
mod client;
mod config;
pub mod envelope;
pub mod loopback;
pub mod prompt;

pub use adapters::{HttpBackend, LlmGenerator, LlmPolicy, LlmPredictor, LlmWorldModel};
pub use client::{ChatClient, Completion, Message};
pub use config::{EndpointConfig, TokenCounterMode};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClientError {
    #[error("endpoint config: {0}")]
    Config(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("protocol: {0}")]
    Protocol(String),
}

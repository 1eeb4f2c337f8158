//! Operational surface for the coaching pipeline: configuration, the
//! `coached` subcommands, and the HTTP service.

pub mod chat;
pub mod config;
pub mod eval_desk;
pub mod pipeline;
pub mod server;

use coached_core::agent::AgentError;
use coached_core::llm::LlmError;
use coached_core::retrieval::RetrievalError;
use coached_eval::EvalError;
use thiserror::Error;

pub use config::AppConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("io: {0}")]
    Io(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

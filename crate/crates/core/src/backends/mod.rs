//! Model, retriever and agent-loop clients.
//!
//! Everything upstream talks to the outside world through [`ModelHandle`] and
//! [`RetrieverHandle`]. Live implementations speak HTTP; the scripted ones
//! replay canned replies keyed by request fingerprint so that every diagnosis
//! and repair path can be exercised offline and deterministically.

mod agent;
mod meter;
mod model;
mod retriever;
mod scripted;

use std::time::Duration;

use thiserror::Error;

pub use agent::{
    parse_agent_output, run_agent, Agent, AgentConfig, AgentError, AgentOutput, AgentRun,
    FLAG_BUDGET, FLAG_UNTAGGED,
};
pub use meter::{Bucket, Meter};
pub use model::{ChatMessage, ModelHandle, ModelReply, ModelRequest, OpenAiClient, Usage};
pub use retriever::{
    normalize_results, parse_corpus, toy_corpus, HttpRetriever, KeywordRetriever, RetrievalReply, RetrievalRequest,
    RetrieverHandle,
};
pub use scripted::{
    CannedReply, CapturedRequest, FnModel, Script, ScriptedModel, ScriptedRetriever,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("unparseable reply at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("no scripted reply for fingerprint `{fingerprint}`")]
    ScriptMiss { fingerprint: String },
    #[error("backend misconfigured: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Timeout(_) | BackendError::Transport(_))
    }

    /// The endpoint is unreachable; retries were already spent by the client.
    pub fn is_hard_failure(&self) -> bool {
        self.is_retryable()
    }
}

/// Bounded exponential backoff for live clients.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub(crate) fn run<T>(
        &self,
        mut call: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match call() {
                Err(e) if e.is_retryable() && attempt < self.max_attempts => {
                    log::warn!("attempt {attempt} failed: {e}; retrying");
                    std::thread::sleep(self.base_delay * 2u32.pow(attempt - 1));
                }
                other => return other,
            }
        }
    }
}

pub(crate) fn map_reqwest(err: reqwest::Error) -> BackendError {
    if err.is_timeout() {
        BackendError::Timeout(err.to_string())
    } else {
        BackendError::Transport(err.to_string())
    }
}

pub(crate) fn excerpt(body: &str) -> String {
    const MAX: usize = 200;
    if body.len() <= MAX {
        body.to_string()
    } else {
        let mut end = MAX;
        while !body.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &body[..end])
    }
}

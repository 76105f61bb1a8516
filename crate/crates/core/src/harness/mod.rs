//! Dataset evaluation: configuration, failure injection, the batch pipeline
//! and report emission.

pub mod config;
pub mod inject;
pub mod pipeline;
pub mod report;
pub mod sim;

use thiserror::Error;

use crate::backends::BackendError;
use crate::metrics::MetricsError;
use crate::prompts::PromptError;

pub use config::{BackendConfig, RunConfig, Strategy};
pub use inject::{inject_failure, InjectError, Injector};
pub use pipeline::{load_dataset, parse_dataset, repair_instance, run_pipeline, Backends, InstanceError, InstanceRun};
pub use report::{emit_report, Aggregates, EvalReport, InstanceRecord, InstanceStatus, OutcomeSummary};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot access {path}")]
    Io { path: String, source: std::io::Error },
    #[error("configuration: {0}")]
    Config(String),
    #[error("input line {line}: {message}")]
    Input { line: usize, message: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Inject(#[from] InjectError),
    /// A backend became unreachable; `partial` holds the instances finished before the abort.
    #[error("run aborted: {error}")]
    Aborted {
        error: BackendError,
        partial: Box<EvalReport>,
    },
}

impl HarnessError {
    /// Whether the failure came from a backend rather than the input.
    pub fn is_backend(&self) -> bool {
        matches!(self, HarnessError::Backend(_) | HarnessError::Aborted { .. })
    }
}

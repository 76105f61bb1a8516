//! Diagnose-and-repair engine for failed agentic RAG trajectories.

pub mod backends;
pub mod diagnosis;
pub mod harness;
pub mod metrics;
pub mod prompts;
pub mod repair;
pub mod trajectory;

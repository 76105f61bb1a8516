//! ReAct-style agent loop used by rerun, step-wise regeneration and tests.

use super::meter::{Bucket, Meter};
use super::model::{ModelHandle, ModelRequest};
use super::retriever::{RetrievalRequest, RetrieverHandle};
use super::BackendError;
use crate::prompts::{render_actions, PromptError, PromptRole, PromptTemplates};
use crate::trajectory::{approx_tokens, Action};

pub const FLAG_UNTAGGED: &str = "agent_untagged_output";
pub const FLAG_BUDGET: &str = "agent_budget_exhausted";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AgentOutput {
    /// Untagged text, joined into one reasoning step.
    pub reasoning: String,
    pub search: Option<String>,
    pub answer: Option<String>,
}

impl AgentOutput {
    pub fn is_tagged(&self) -> bool {
        self.search.is_some() || self.answer.is_some()
    }
}

fn find_tag(line: &str, tag: &str) -> Option<(usize, String)> {
    let upper = line.to_ascii_uppercase();
    let start = upper.find(&format!("{tag}["))?;
    let body = &line[start + tag.len() + 1..];
    let inner = match body.rfind(']') {
        Some(end) => &body[..end],
        None => body,
    };
    Some((start, inner.trim().to_string()))
}

/// Splits a model turn into reasoning text and the first `SEARCH[...]` or
/// `ANSWER[...]` tag. Anything after the first tag is ignored.
pub fn parse_agent_output(text: &str) -> AgentOutput {
    let mut out = AgentOutput::default();
    let mut reasoning = Vec::new();
    for line in text.lines() {
        let search = find_tag(line, "SEARCH");
        let answer = find_tag(line, "ANSWER");
        let tag = match (search, answer) {
            (Some(s), Some(a)) if a.0 < s.0 => Some((false, a)),
            (Some(s), _) => Some((true, s)),
            (None, Some(a)) => Some((false, a)),
            (None, None) => None,
        };
        match tag {
            Some((is_search, (start, inner))) => {
                let before = line[..start].trim();
                if !before.is_empty() {
                    reasoning.push(before.to_string());
                }
                if is_search {
                    out.search = Some(inner);
                } else {
                    out.answer = Some(inner);
                }
                break;
            }
            None => {
                let l = line.trim();
                if !l.is_empty() {
                    reasoning.push(l.to_string());
                }
            }
        }
    }
    out.reasoning = reasoning.join(" ");
    out
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    /// Model turns allowed before a fallback answer is forced.
    pub max_steps: usize,
    pub top_k: usize,
    pub model: String,
    pub max_tokens: u32,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            max_steps: 10,
            top_k: 5,
            model: String::new(),
            max_tokens: 512,
        }
    }
}

pub struct Agent<'a> {
    pub llm: &'a dyn ModelHandle,
    pub retriever: &'a dyn RetrieverHandle,
    pub templates: &'a PromptTemplates,
    pub config: AgentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRun {
    /// Newly generated actions, terminal answer last.
    pub actions: Vec<Action>,
    pub answer: String,
    pub flags: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Runs the agent loop after `prefix`, for trajectory `id`.
///
/// Turn fingerprints are `agent-step:<id>:<start>:<turn>` with `start` the
/// 1-based index of the first generated action.
pub fn run_agent(
    agent: &Agent<'_>,
    meter: &mut Meter,
    bucket: Bucket,
    id: &str,
    question: &str,
    prefix: &[Action],
) -> Result<AgentRun, AgentError> {
    let start = prefix.len() + 1;
    let mut history: Vec<Action> = prefix.to_vec();
    let mut flags = Vec::new();
    let mut last_reasoning = String::new();
    for turn in 1..=agent.config.max_steps.max(1) {
        let prompt = agent.templates.render(
            PromptRole::AgentStep,
            &[
                ("question", question),
                ("history", &render_actions(&history, 1)),
                ("max_steps", &agent.config.max_steps.to_string()),
            ],
        )?;
        let mut req = ModelRequest::new(
            PromptRole::AgentStep,
            vec![id.to_string(), start.to_string(), turn.to_string()],
            prompt,
        )
        .with_model(&agent.config.model);
        req.max_tokens = agent.config.max_tokens;
        let mut out = parse_agent_output(&meter.chat(agent.llm, bucket, &req)?.text);
        if !out.is_tagged() {
            out = parse_agent_output(&meter.chat(agent.llm, bucket, &req)?.text);
            if !out.is_tagged() && !flags.iter().any(|f| f == FLAG_UNTAGGED) {
                flags.push(FLAG_UNTAGGED.to_string());
            }
        }
        if !out.reasoning.is_empty() {
            history.push(Action::reason(&out.reasoning, approx_tokens(&out.reasoning)));
            last_reasoning = out.reasoning.clone();
        }
        if let Some(answer) = out.answer {
            history.push(Action::answer(&answer, approx_tokens(&answer)));
            return Ok(AgentRun {
                actions: history.split_off(prefix.len()),
                answer,
                flags,
            });
        }
        if let Some(query) = out.search.filter(|q| !q.is_empty()) {
            history.push(Action::search(&query, approx_tokens(&query)));
            let reply =
                meter.retrieve(agent.retriever, &RetrievalRequest::new(&query, agent.config.top_k))?;
            history.push(Action::information(reply.results, 0));
        }
    }
    flags.push(FLAG_BUDGET.to_string());
    history.push(Action::answer(&last_reasoning, approx_tokens(&last_reasoning)));
    Ok(AgentRun {
        actions: history.split_off(prefix.len()),
        answer: last_reasoning,
        flags,
    })
}

//! Diagnosis-conditioned repair with prefix reuse, plus baselines and ablations.
//!
//! Every operator keeps `prefix(t, k†)` byte-identical and regenerates only
//! from `k†` onward. The baselines (rerun, step-wise retry) and ablation modes
//! share the same outcome type so the harness can compare them directly.

mod baselines;
mod operators;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use baselines::AblationMode;
pub use operators::{parse_plan, PlanStep};

use crate::backends::{AgentError, BackendError, Meter, ModelHandle, ModelRequest, RetrieverHandle};
use crate::backends::parse_agent_output;
use crate::diagnosis::{Diagnosis, ErrorType};
use crate::prompts::{PromptError, PromptRole, PromptTemplates};
use crate::trajectory::{approx_tokens, Action, CostLedger, Trajectory, TrajectoryError};

pub const FLAG_EMPTY_REWRITE: &str = "empty_rewrite";
pub const FLAG_SUFFIX_BUDGET: &str = "suffix_budget_exceeded";
pub const FLAG_EMPTY_QUERY_SET: &str = "empty_query_set";
pub const FLAG_UNTAGGED_ANSWER: &str = "answer_untagged";
pub const FLAG_PLAN_LINE_SKIPPED: &str = "plan_line_skipped";
pub const FLAG_PLAN_BUDGET: &str = "plan_budget_exhausted";
pub const FLAG_VERIFY_UNPARSEABLE: &str = "verification_unparseable";
pub const FLAG_VERIFY_ALL_ACTIONS: &str = "verification_without_reason_actions";

#[derive(Debug, Error)]
pub enum RepairError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("plan reply could not be parsed into any step")]
    PlanUnparseable,
    #[error("{0}")]
    Precondition(String),
    #[error("repaired trajectory is invalid: {0}")]
    Invalid(String),
}

impl From<AgentError> for RepairError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Backend(b) => RepairError::Backend(b),
            AgentError::Prompt(p) => RepairError::Prompt(p),
        }
    }
}

impl RepairError {
    pub fn backend(&self) -> Option<&BackendError> {
        match self {
            RepairError::Backend(b) => Some(b),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairOperatorId {
    AnswerRewrite,
    EvidenceGroundedReReason,
    QueryRewriteTopK,
    PlanBasedRepair,
}

/// The fixed diagnosis-to-operator map.
pub fn select_operator(c: ErrorType) -> RepairOperatorId {
    match c {
        ErrorType::FormatError => RepairOperatorId::AnswerRewrite,
        ErrorType::ReasoningError => RepairOperatorId::EvidenceGroundedReReason,
        ErrorType::RetrieverError => RepairOperatorId::QueryRewriteTopK,
        ErrorType::SearchError => RepairOperatorId::PlanBasedRepair,
    }
}

/// Operator or baseline that produced an outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairMethod {
    AnswerRewrite,
    EvidenceGroundedReReason,
    QueryRewriteTopK,
    PlanBasedRepair,
    Rerun,
    StepwiseRetry,
}

impl From<RepairOperatorId> for RepairMethod {
    fn from(op: RepairOperatorId) -> Self {
        match op {
            RepairOperatorId::AnswerRewrite => RepairMethod::AnswerRewrite,
            RepairOperatorId::EvidenceGroundedReReason => RepairMethod::EvidenceGroundedReReason,
            RepairOperatorId::QueryRewriteTopK => RepairMethod::QueryRewriteTopK,
            RepairOperatorId::PlanBasedRepair => RepairMethod::PlanBasedRepair,
        }
    }
}

impl RepairMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            RepairMethod::AnswerRewrite => "answer_rewrite",
            RepairMethod::EvidenceGroundedReReason => "evidence_grounded_re_reason",
            RepairMethod::QueryRewriteTopK => "query_rewrite_top_k",
            RepairMethod::PlanBasedRepair => "plan_based_repair",
            RepairMethod::Rerun => "rerun",
            RepairMethod::StepwiseRetry => "stepwise_retry",
        }
    }
}

impl fmt::Display for RepairMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RepairOperatorId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| format!("unknown operator `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairConfig {
    pub base_top_k: usize,
    pub top_k_multiplier: usize,
    /// Suffix budget in actions for plan execution; turn budget for agent regeneration.
    pub max_steps: usize,
    #[serde(default)]
    pub model: String,
    pub max_tokens: u32,
}

impl Default for RepairConfig {
    fn default() -> Self {
        RepairConfig {
            base_top_k: 5,
            top_k_multiplier: 2,
            max_steps: 10,
            model: String::new(),
            max_tokens: 512,
        }
    }
}

impl RepairConfig {
    pub fn augmented_top_k(&self) -> usize {
        self.base_top_k * self.top_k_multiplier
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairOutcome {
    pub repaired: Trajectory,
    pub method: RepairMethod,
    pub ledger: CostLedger,
    pub prefix_len: usize,
    pub retrieval_calls: u64,
    pub new_predicted_answer: String,
    pub flags: Vec<String>,
    /// `top_k` of every retrieval issued during the repair.
    pub retrieval_top_ks: Vec<usize>,
}

pub struct Repairer<'a> {
    pub llm: &'a dyn ModelHandle,
    pub retriever: &'a dyn RetrieverHandle,
    pub templates: &'a PromptTemplates,
    pub config: RepairConfig,
}

impl<'a> Repairer<'a> {
    pub fn new(
        llm: &'a dyn ModelHandle,
        retriever: &'a dyn RetrieverHandle,
        templates: &'a PromptTemplates,
        config: RepairConfig,
    ) -> Self {
        Repairer {
            llm,
            retriever,
            templates,
            config,
        }
    }

    fn request(&self, role: PromptRole, salient: Vec<String>, prompt: String) -> ModelRequest {
        let mut req = ModelRequest::new(role, salient, prompt).with_model(&self.config.model);
        req.max_tokens = self.config.max_tokens;
        req
    }

    /// Applies one operator at `k_dagger`.
    pub fn apply(
        &self,
        meter: &mut Meter,
        t: &Trajectory,
        op: RepairOperatorId,
        k_dagger: usize,
    ) -> Result<RepairOutcome, RepairError> {
        match op {
            RepairOperatorId::AnswerRewrite => self.repair_format(meter, t),
            RepairOperatorId::EvidenceGroundedReReason => self.repair_reasoning(meter, t, k_dagger),
            RepairOperatorId::QueryRewriteTopK => self.repair_retriever(meter, t, k_dagger),
            RepairOperatorId::PlanBasedRepair => self.repair_search(meter, t, k_dagger),
        }
    }

    /// Selects the operator from the diagnosis and applies it.
    pub fn repair(&self, t: &Trajectory, diagnosis: &Diagnosis) -> Result<RepairOutcome, RepairError> {
        let mut meter = Meter::new();
        self.apply(&mut meter, t, select_operator(diagnosis.error_type), diagnosis.k_dagger)
    }
}

/// Answer from an `ANSWER[...]` tag, else the last non-empty line.
pub(crate) fn extract_answer(text: &str) -> (String, bool) {
    if let Some(a) = parse_agent_output(text).answer {
        return (a, true);
    }
    let last = text
        .lines()
        .map(str::trim)
        .rfind(|l| !l.is_empty())
        .unwrap_or_default();
    (last.to_string(), false)
}

/// Assembles and checks an outcome.
pub(crate) fn finish(
    original: &Trajectory,
    mut body: Vec<Action>,
    answer: String,
    method: RepairMethod,
    prefix_len: usize,
    meter: &Meter,
    flags: Vec<String>,
) -> Result<RepairOutcome, RepairError> {
    body.push(Action::answer(&answer, approx_tokens(&answer)));
    let repaired = Trajectory {
        actions: body,
        predicted_answer: answer.clone(),
        ..original.clone()
    };
    outcome(original, repaired, method, prefix_len, meter, flags)
}

pub(crate) fn outcome(
    original: &Trajectory,
    repaired: Trajectory,
    method: RepairMethod,
    prefix_len: usize,
    meter: &Meter,
    flags: Vec<String>,
) -> Result<RepairOutcome, RepairError> {
    repaired
        .validate()
        .map_err(|e| RepairError::Invalid(e.to_string()))?;
    if repaired.actions.get(..prefix_len) != original.actions.get(..prefix_len) {
        return Err(RepairError::Invalid(format!(
            "first {prefix_len} actions differ from the original"
        )));
    }
    let ledger = meter.ledger();
    Ok(RepairOutcome {
        new_predicted_answer: repaired.predicted_answer.clone(),
        repaired,
        method,
        ledger,
        prefix_len,
        retrieval_calls: ledger.retrieval_calls,
        flags,
        retrieval_top_ks: meter.top_ks().to_vec(),
    })
}
